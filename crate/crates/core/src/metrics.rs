//! Realism and smoothness metrics comparing generated and real scenarios.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{MetricScenario, ScenarioType};
use crate::geometry::{dist, polyline_length, Point2};

pub const DEFAULT_BINS: usize = 50;
pub const HISTOGRAM_SMOOTHING: f64 = 1e-10;

fn directed(a: &[Point2], b: &[Point2]) -> f64 {
    let mut worst = 0.0f64;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = dist(*p, *q);
            if d < best {
                best = d;
                // `p` can no longer raise the running maximum.
                if best <= worst {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst
}

/// Symmetric Hausdorff distance between point sets.
pub fn hausdorff(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("hausdorff point set"));
    }
    Ok(directed(a, b).max(directed(b, a)))
}

/// Uniform-bin probability histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub probs: Vec<f64>,
}

impl Histogram {
    /// Bins `values` over `[lo, hi]`, adds `smoothing` to every bin
    /// probability and renormalizes.
    pub fn from_values(values: &[f64], lo: f64, hi: f64, bins: usize, smoothing: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("histogram values"));
        }
        if bins == 0 || !(hi >= lo) {
            return Err(Error::Config(format!("invalid binning [{lo}, {hi}] x {bins}")));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0.0f64; bins];
        for v in values {
            let i = if width > 0.0 { ((v - lo) / width).floor() as isize } else { 0 };
            counts[i.clamp(0, bins as isize - 1) as usize] += 1.0;
        }
        let n = values.len() as f64;
        let total = 1.0 + smoothing * bins as f64;
        let probs = counts.iter().map(|c| (c / n + smoothing) / total).collect();
        Ok(Self { lo, hi, probs })
    }

    /// Two histograms over the combined range of both samples.
    pub fn shared(a: &[f64], b: &[f64], bins: usize) -> Result<(Self, Self)> {
        let all = a.iter().chain(b);
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((
            Self::from_values(a, lo, hi, bins, HISTOGRAM_SMOOTHING)?,
            Self::from_values(b, lo, hi, bins, HISTOGRAM_SMOOTHING)?,
        ))
    }
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(pi, _)| **pi > 0.0).map(|(pi, mi)| pi * (pi / mi).ln()).sum()
}

/// Jensen-Shannon divergence in nats.
pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.probs.len() != q.probs.len() || p.lo != q.lo || p.hi != q.hi {
        return Err(Error::BinningMismatch);
    }
    let m: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl_to_mixture(&p.probs, &m) + 0.5 * kl_to_mixture(&q.probs, &m)).max(0.0))
}

/// JSD between pooled road arc lengths.
pub fn jsd_road_length(real: &[Vec<Point2>], gen: &[Vec<Point2>]) -> Result<f64> {
    let a: Vec<f64> = real.iter().map(|r| polyline_length(r)).collect();
    let b: Vec<f64> = gen.iter().map(|r| polyline_length(r)).collect();
    let (p, q) = Histogram::shared(&a, &b, DEFAULT_BINS)?;
    jsd(&p, &q)
}

fn spacings(roads: &[Vec<Point2>]) -> Vec<f64> {
    roads.iter().flat_map(|r| r.windows(2).map(|w| dist(w[0], w[1]))).collect()
}

/// JSD between pooled consecutive-point distances.
pub fn jsd_cpd(real: &[Vec<Point2>], gen: &[Vec<Point2>]) -> Result<f64> {
    let (p, q) = Histogram::shared(&spacings(real), &spacings(gen), DEFAULT_BINS)?;
    jsd(&p, &q)
}

/// Discrete squared second-derivative integral of samples taken every `h`
/// along the curve parameter; endpoints are excluded.
pub fn sisd_uniform<const D: usize>(points: &[[f64; D]], h: f64) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("smoothness needs 3 points, got {}", points.len())));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Degenerate(format!("sample spacing {h}")));
    }
    let h2 = h * h;
    let mut acc = 0.0;
    for w in points.windows(3) {
        for a in 0..D {
            let d = (w[2][a] - 2.0 * w[1][a] + w[0][a]) / h2;
            acc += d * d;
        }
    }
    Ok(acc * h)
}

/// [`sisd_uniform`] with `h` the mean spacing of `road`. A road collapsed
/// onto one point has no bending and scores 0.
pub fn sisd<const D: usize>(road: &[[f64; D]]) -> Result<f64> {
    if road.len() < 3 {
        return Err(Error::Degenerate(format!("smoothness needs 3 points, got {}", road.len())));
    }
    let total: f64 = road
        .windows(2)
        .map(|w| (0..D).map(|a| (w[1][a] - w[0][a]).powi(2)).sum::<f64>().sqrt())
        .sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    sisd_uniform(road, total / (road.len() - 1) as f64)
}

/// Mean road SISD of one scenario.
pub fn scenario_sisd(roads: &[Vec<Point2>]) -> Result<f64> {
    if roads.is_empty() {
        return Err(Error::Empty("scenario roads"));
    }
    let mut acc = 0.0;
    for r in roads {
        acc += sisd(r)?;
    }
    Ok(acc / roads.len() as f64)
}

/// Every road point of a scenario as one set.
pub fn pooled_points(roads: &[Vec<Point2>]) -> Vec<Point2> {
    roads.iter().flatten().copied().collect()
}

/// Nearest-scenario search under the pooled-point Hausdorff distance.
pub fn nearest_by_hausdorff(query: &[Point2], candidates: &[Vec<Point2>]) -> Result<(usize, f64)> {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let d = hausdorff(query, c)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    if best.0 == usize::MAX {
        return Err(Error::Empty("hausdorff candidates"));
    }
    Ok(best)
}

/// One row of the comparison table; `scenario_type = None` pools all types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario_type: Option<ScenarioType>,
    pub generated: usize,
    pub real: usize,
    pub hd: f64,
    pub jsd_rl: f64,
    pub jsd_cpd: f64,
    pub sisd: f64,
}

fn row(scenario_type: Option<ScenarioType>, real: &[&MetricScenario], gen: &[&MetricScenario]) -> Result<MetricRow> {
    if real.is_empty() || gen.is_empty() {
        return Err(Error::Empty("metric report sets"));
    }
    let real_sets: Vec<Vec<Point2>> = real.iter().map(|s| pooled_points(&s.roads)).collect();
    let mut hd = 0.0;
    let mut sisd_sum = 0.0;
    for g in gen {
        hd += nearest_by_hausdorff(&pooled_points(&g.roads), &real_sets)?.1;
        sisd_sum += scenario_sisd(&g.roads)?;
    }
    let real_roads: Vec<Vec<Point2>> = real.iter().flat_map(|s| s.roads.iter().cloned()).collect();
    let gen_roads: Vec<Vec<Point2>> = gen.iter().flat_map(|s| s.roads.iter().cloned()).collect();
    Ok(MetricRow {
        scenario_type,
        generated: gen.len(),
        real: real.len(),
        hd: hd / gen.len() as f64,
        jsd_rl: jsd_road_length(&real_roads, &gen_roads)?,
        jsd_cpd: jsd_cpd(&real_roads, &gen_roads)?,
        sisd: sisd_sum / gen.len() as f64,
    })
}

/// One row per scenario type present in `gen` (compared with real
/// scenarios of that type), then a pooled row.
pub fn report(real: &[MetricScenario], gen: &[MetricScenario]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for ty in ScenarioType::ALL {
        let g: Vec<&MetricScenario> = gen.iter().filter(|s| s.scenario_type == ty).collect();
        if g.is_empty() {
            continue;
        }
        let r: Vec<&MetricScenario> = real.iter().filter(|s| s.scenario_type == ty).collect();
        if r.is_empty() {
            return Err(Error::Empty("real scenarios of a generated type"));
        }
        rows.push(row(Some(ty), &r, &g)?);
    }
    let all_real: Vec<&MetricScenario> = real.iter().collect();
    let all_gen: Vec<&MetricScenario> = gen.iter().collect();
    rows.push(row(None, &all_real, &all_gen)?);
    Ok(rows)
}

//! Continuity and reasonableness scoring of generated scenarios.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{MetricScenario, ScenarioType};
use crate::geometry::{abs_sin_between, direction, dist, distance_to_polyline, segment_crossing, Point2};
use crate::terrain::menger_curvature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub lambda: f64,
    pub s_min: f64,
    /// Proximity that counts as overlap, m.
    pub d_min: f64,
    /// Consecutive close points needed to flag overlap.
    pub tau: usize,
    /// Radius around junctions where proximity is allowed, m.
    pub junction_radius: f64,
    /// Smallest crossing angle treated as a junction, degrees.
    pub junction_angle_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            s_min: 80.0,
            d_min: 3.5,
            tau: 5,
            junction_radius: 15.0,
            junction_angle_deg: 15.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=100.0).contains(&self.s_min) {
            return Err(Error::Config(format!("s_min must lie in [0, 100], got {}", self.s_min)));
        }
        if !(self.d_min > 0.0) || self.tau == 0 || !(self.junction_radius >= 0.0) {
            return Err(Error::Config("d_min and tau must be positive, junction_radius >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub w1: f64,
    pub w2: f64,
    pub s: f64,
    pub lambda: f64,
}

/// `clamp(100 - (w1 + lambda w2), 0, 100)`.
pub fn total_score(w1: f64, w2: f64, lambda: f64) -> ScenarioScore {
    ScenarioScore {
        w1,
        w2,
        s: (100.0 - (w1 + lambda * w2)).clamp(0.0, 100.0),
        lambda,
    }
}

/// Mean `|k_{i+1} - k_i| / ds_i` of one road over interior vertices.
fn road_ccr(road: &[Point2]) -> Option<f64> {
    if road.len() < 4 {
        return None;
    }
    let k = menger_curvature(road).ok()?;
    let mut acc = 0.0;
    let pairs = road.len() - 3;
    for i in 1..road.len() - 2 {
        acc += (k[i + 1] - k[i]).abs() / dist(road[i], road[i + 1]);
    }
    let v = acc / pairs as f64;
    v.is_finite().then_some(v)
}

/// Mean curvature change rate and the number of roads skipped as
/// degenerate (fewer than 4 points, repeated or reversing points).
pub fn curvature_change_rate(roads: &[Vec<Point2>]) -> Result<(f64, usize)> {
    let rates: Vec<f64> = roads.iter().filter_map(|r| road_ccr(r)).collect();
    if rates.is_empty() {
        return Err(Error::Degenerate("no road supports a curvature change rate".into()));
    }
    Ok((rates.iter().sum::<f64>() / rates.len() as f64, roads.len() - rates.len()))
}

/// `clamp(100 |ccr - ref| / ref, 0, 100)`.
pub fn continuity_metric(ccr: f64, ref_ccr: f64) -> Result<f64> {
    if !(ref_ccr > 0.0 && ref_ccr.is_finite()) {
        return Err(Error::Config(format!("reference curvature change rate must be positive, got {ref_ccr}")));
    }
    Ok((100.0 * (ccr - ref_ccr).abs() / ref_ccr).clamp(0.0, 100.0))
}

fn same_road(a: &[Point2], b: &[Point2]) -> bool {
    a == b || (a.len() == b.len() && a.iter().eq(b.iter().rev()))
}

/// Roads with exact duplicates (either direction) removed.
pub fn distinct_roads(roads: &[Vec<Point2>]) -> Vec<Vec<Point2>> {
    let mut out: Vec<Vec<Point2>> = Vec::new();
    for r in roads {
        if !out.iter().any(|o| same_road(o, r)) {
            out.push(r.clone());
        }
    }
    out
}

/// Centers of legitimate road meetings: proper crossings and end-to-road
/// contacts whose angle exceeds `min_angle_deg`.
pub fn junction_centers(roads: &[Vec<Point2>], contact: f64, min_angle_deg: f64) -> Vec<Point2> {
    let min_sin = min_angle_deg.to_radians().sin();
    let mut out = Vec::new();
    for (i, a) in roads.iter().enumerate() {
        for (j, b) in roads.iter().enumerate() {
            if i == j {
                continue;
            }
            if i < j {
                for sa in a.windows(2) {
                    for sb in b.windows(2) {
                        if let Some(p) = segment_crossing(sa[0], sa[1], sb[0], sb[1]) {
                            if let (Some(u), Some(v)) = (direction(sa[0], sa[1]), direction(sb[0], sb[1])) {
                                if abs_sin_between(u, v) > min_sin {
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
            }
            if a.len() < 2 || b.len() < 2 {
                continue;
            }
            let ends = [(a[0], a[1]), (a[a.len() - 1], a[a.len() - 2])];
            for (end, next) in ends {
                let (d, q, seg) = distance_to_polyline(end, b);
                if d > contact {
                    continue;
                }
                if let (Some(u), Some(v)) = (direction(end, next), direction(b[seg], b[seg + 1])) {
                    if abs_sin_between(u, v) > min_sin {
                        out.push(q);
                    }
                }
            }
        }
    }
    out
}

fn self_intersects(road: &[Point2]) -> bool {
    let n = road.len();
    for i in 0..n.saturating_sub(1) {
        for j in i + 2..n - 1 {
            if segment_crossing(road[i], road[i + 1], road[j], road[j + 1]).is_some() {
                return true;
            }
        }
    }
    false
}

/// Per-road overlap flags.
pub fn overlapping_roads(roads: &[Vec<Point2>], cfg: &EvalConfig) -> Vec<bool> {
    let centers = junction_centers(roads, cfg.d_min, cfg.junction_angle_deg);
    let outside = |p: Point2| centers.iter().all(|c| dist(*c, p) > cfg.junction_radius);
    roads
        .iter()
        .enumerate()
        .map(|(i, road)| {
            if self_intersects(road) {
                return true;
            }
            roads.iter().enumerate().filter(|(j, _)| *j != i).any(|(_, other)| {
                if same_road(road, other) {
                    return true;
                }
                if other.len() < 2 {
                    return false;
                }
                let mut run = 0;
                for p in road {
                    if distance_to_polyline(*p, other).0 < cfg.d_min && outside(*p) {
                        run += 1;
                        if run >= cfg.tau {
                            return true;
                        }
                    } else {
                        run = 0;
                    }
                }
                false
            })
        })
        .collect()
}

/// Percentage of overlapping roads.
pub fn overlap_metric(roads: &[Vec<Point2>], cfg: &EvalConfig) -> Result<f64> {
    if roads.is_empty() {
        return Err(Error::Empty("scenario roads"));
    }
    let flagged = overlapping_roads(roads, cfg).iter().filter(|f| **f).count();
    Ok(100.0 * flagged as f64 / roads.len() as f64)
}

/// Means at or below this (1/m^2) are rounding noise of piecewise-constant
/// curvature and count as no variation.
pub const CCR_FLOOR: f64 = 1e-12;

/// Reference curvature change rates from real scenarios, per type and
/// pooled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCcr {
    pub per_type: [Option<f64>; 4],
    pub pooled: Option<f64>,
}

impl ReferenceCcr {
    pub fn from_scenarios(real: &[MetricScenario]) -> Self {
        let mean = |it: &mut dyn Iterator<Item = &MetricScenario>| {
            let v: Vec<f64> = it.filter_map(|s| curvature_change_rate(&distinct_roads(&s.roads)).ok().map(|r| r.0)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64).filter(|m| *m > CCR_FLOOR)
        };
        let mut per_type = [None; 4];
        for ty in ScenarioType::ALL {
            per_type[ty.index()] = mean(&mut real.iter().filter(|s| s.scenario_type == ty));
        }
        Self {
            per_type,
            pooled: mean(&mut real.iter()),
        }
    }

    /// Type reference, falling back to the pooled value when a type has no
    /// curvature variation.
    pub fn for_type(&self, ty: ScenarioType) -> Option<f64> {
        self.per_type[ty.index()].or(self.pooled)
    }
}

/// Eq.-style score of one scenario; exact duplicate roads do not alter the
/// continuity term.
pub fn score_scenario(s: &MetricScenario, refs: &ReferenceCcr, cfg: &EvalConfig) -> Result<ScenarioScore> {
    let ref_ccr = refs
        .for_type(s.scenario_type)
        .ok_or_else(|| Error::Degenerate("no reference curvature change rate".into()))?;
    let w1 = match curvature_change_rate(&distinct_roads(&s.roads)) {
        Ok((ccr, _)) => continuity_metric(ccr, ref_ccr)?,
        Err(_) => 100.0,
    };
    let w2 = overlap_metric(&s.roads, cfg)?;
    Ok(total_score(w1, w2, cfg.lambda))
}

/// Scores every scenario; returns the scores and the accepted indices.
pub fn score_and_filter(library: &[MetricScenario], refs: &ReferenceCcr, cfg: &EvalConfig) -> Result<(Vec<ScenarioScore>, Vec<usize>)> {
    cfg.validate()?;
    let scores = library.iter().map(|s| score_scenario(s, refs, cfg)).collect::<Result<Vec<_>>>()?;
    let accepted = filter_scores(&scores, cfg.s_min);
    Ok((scores, accepted))
}

pub fn filter_scores(scores: &[ScenarioScore], s_min: f64) -> Vec<usize> {
    scores.iter().enumerate().filter(|(_, s)| s.s >= s_min).map(|(i, _)| i).collect()
}

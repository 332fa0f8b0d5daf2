//! Planar-to-3D lifting: gradients from curvature and the lateral-force
//! bound, integrated into elevation profiles.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{MetricScenario, ScenarioType, ShapePoint};
use crate::geometry::{cross, dist, polyline_length, sub, Point2};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    /// Design speed, m/s.
    pub v: f64,
    /// Vehicle mass, kg.
    pub mass: f64,
    /// Lateral force bound, N.
    pub fc_max: f64,
    /// Gradient bound (rise over run).
    pub rho_max: f64,
    /// Moving-average window over the gradient profile.
    pub window: usize,
    /// Ramp height on flyover roads, m.
    pub flyover_clearance: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        let mass = 1500.0;
        Self {
            v: 22.22,
            mass,
            fc_max: 0.3 * mass * GRAVITY,
            rho_max: 0.05,
            window: 5,
            flyover_clearance: 5.5,
        }
    }
}

impl TerrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("v", self.v), ("mass", self.mass), ("fc_max", self.fc_max), ("rho_max", self.rho_max)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.rho_max > 0.15 {
            return Err(Error::Config(format!("rho_max must lie in (0, 0.15], got {}", self.rho_max)));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if !(self.flyover_clearance >= 0.0) {
            return Err(Error::Config("flyover_clearance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Three-point circumscribed-circle curvature at every interior vertex;
/// endpoints copy their neighbour.
pub fn menger_curvature(polyline: &[Point2]) -> Result<Vec<f64>> {
    if polyline.len() < 3 {
        return Err(Error::Degenerate(format!("curvature needs 3 points, got {}", polyline.len())));
    }
    if let Some(i) = polyline.windows(2).position(|w| w[0] == w[1]) {
        return Err(Error::DuplicatePoint(i + 1));
    }
    let mut k = vec![0.0; polyline.len()];
    for i in 1..polyline.len() - 1 {
        let (a, b, c) = (polyline[i - 1], polyline[i], polyline[i + 1]);
        let twice_area = cross(sub(b, a), sub(c, a)).abs();
        let ac = dist(a, c);
        k[i] = if twice_area == 0.0 {
            if ac == 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            2.0 * twice_area / (dist(a, b) * dist(b, c) * ac)
        };
    }
    let last = k.len() - 1;
    k[0] = k[1];
    k[last] = k[last - 1];
    Ok(k)
}

/// Gradient before the bound: `tan(arccos(clamp(Fc_max r / (m v^2), 0, 1)))`.
pub fn critical_gradient(kappa: f64, cfg: &TerrainConfig) -> f64 {
    let c = if kappa == 0.0 {
        1.0
    } else {
        (cfg.fc_max / (kappa * cfg.mass * cfg.v * cfg.v)).clamp(0.0, 1.0)
    };
    c.acos().tan()
}

/// Centered moving average, window truncated at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Per-point gradient `min(rho_c, rho_max)`, smoothed.
pub fn slope_profile(polyline: &[Point2], cfg: &TerrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let kappa = menger_curvature(polyline)?;
    let raw: Vec<f64> = kappa.iter().map(|k| critical_gradient(*k, cfg).min(cfg.rho_max)).collect();
    Ok(moving_average(&raw, cfg.window).into_iter().map(|r| r.min(cfg.rho_max)).collect())
}

/// `z_0 = 0`, `z_{i+1} = z_i + rho_i ds_i`.
pub fn elevation_profile(rho: &[f64], polyline: &[Point2]) -> Result<Vec<f64>> {
    if rho.len() != polyline.len() || polyline.is_empty() {
        return Err(Error::Contract(format!("{} gradients for {} points", rho.len(), polyline.len())));
    }
    let mut z = Vec::with_capacity(polyline.len());
    z.push(0.0);
    for i in 0..polyline.len() - 1 {
        z.push(z[i] + rho[i] * dist(polyline[i], polyline[i + 1]));
    }
    Ok(z)
}

/// Rise at `rho_max` to `clearance`, hold, descend; heights per point.
pub fn ramp_template(polyline: &[Point2], clearance: f64, rho_max: f64) -> Vec<f64> {
    let total = polyline_length(polyline);
    let mut s = 0.0;
    let mut out = Vec::with_capacity(polyline.len());
    for (i, p) in polyline.iter().enumerate() {
        if i > 0 {
            s += dist(polyline[i - 1], *p);
        }
        out.push(clearance.min(rho_max * s).min(rho_max * (total - s).max(0.0)));
    }
    out
}

/// Road with per-point elevation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road3d {
    pub points: Vec<[f64; 3]>,
}

impl Road3d {
    pub fn planar(&self) -> Vec<Point2> {
        self.points.iter().map(|p| [p[0], p[1]]).collect()
    }

    /// Largest `|dz| / ds` over segments.
    pub fn max_gradient(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let ds = dist([w[0][0], w[0][1]], [w[1][0], w[1][1]]);
                (w[1][2] - w[0][2]).abs() / ds
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario3d {
    pub origin: ShapePoint,
    pub scenario_type: ScenarioType,
    pub roads: Vec<Road3d>,
}

/// Lifting outcome with the number of roads dropped as degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifted {
    pub scenario: Scenario3d,
    pub dropped_roads: usize,
}

fn dedup(road: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(road.len());
    for p in road {
        if out.last() != Some(p) {
            out.push(*p);
        }
    }
    out
}

/// Lifts every road; repeated consecutive points are merged and roads left
/// with fewer than 2 points are dropped. The longest road of a flyover
/// scenario also carries the ramp template, with the summed gradient
/// clipped to `rho_max`.
pub fn lift_scenario(s: &MetricScenario, cfg: &TerrainConfig) -> Result<Lifted> {
    cfg.validate()?;
    let roads: Vec<Vec<Point2>> = s.roads.iter().map(|r| dedup(r)).filter(|r| r.len() >= 2).collect();
    let dropped_roads = s.roads.len() - roads.len();
    if roads.is_empty() {
        return Err(Error::Degenerate("no road with two distinct points".into()));
    }
    let ramp_road = (s.scenario_type == ScenarioType::Flyover).then(|| {
        let mut best = 0;
        for (i, r) in roads.iter().enumerate() {
            if polyline_length(r) > polyline_length(&roads[best]) {
                best = i;
            }
        }
        best
    });
    let mut out = Vec::with_capacity(roads.len());
    for (i, road) in roads.iter().enumerate() {
        let rho = if road.len() >= 3 {
            slope_profile(road, cfg)?
        } else {
            vec![0.0; road.len()]
        };
        let z = if ramp_road == Some(i) {
            let ramp = ramp_template(road, cfg.flyover_clearance, cfg.rho_max);
            let mut z = vec![0.0; road.len()];
            for j in 0..road.len() - 1 {
                let ds = dist(road[j], road[j + 1]);
                let g = (rho[j] + (ramp[j + 1] - ramp[j]) / ds).clamp(-cfg.rho_max, cfg.rho_max);
                z[j + 1] = z[j] + g * ds;
            }
            z
        } else {
            elevation_profile(&rho, road)?
        };
        out.push(Road3d {
            points: road.iter().zip(&z).map(|(p, z)| [p[0], p[1], *z]).collect(),
        });
    }
    Ok(Lifted {
        scenario: Scenario3d {
            origin: s.origin,
            scenario_type: s.scenario_type,
            roads: out,
        },
        dropped_roads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synth::toy_metric;
    use proptest::prelude::*;
    use rand::Rng;

    fn circle(radius: f64, n: usize, span: f64) -> Vec<Point2> {
        (0..n)
            .map(|i| {
                let a = span * i as f64 / (n - 1) as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect()
    }

    #[test]
    fn default_force_bound() {
        assert!((TerrainConfig::default().fc_max - 4414.5).abs() < 1e-9);
    }

    #[test]
    fn straight_roads_are_flat() {
        let line: Vec<Point2> = (0..10).map(|i| [i as f64 * 5.0, i as f64 * 2.0]).collect();
        assert!(menger_curvature(&line).unwrap().iter().all(|k| *k == 0.0));
        let cfg = TerrainConfig::default();
        let rho = slope_profile(&line, &cfg).unwrap();
        assert!(rho.iter().all(|r| *r == 0.0));
        assert!(elevation_profile(&rho, &line).unwrap().iter().all(|z| *z == 0.0));
    }

    #[test]
    fn circle_curvature() {
        let k = menger_curvature(&circle(50.0, 40, 2.0)).unwrap();
        assert!(k.iter().all(|v| (v - 0.02).abs() < 1e-6));
        let doubled: Vec<Point2> = circle(50.0, 40, 2.0).iter().map(|p| [2.0 * p[0], 2.0 * p[1]]).collect();
        let k2 = menger_curvature(&doubled).unwrap();
        for (a, b) in k.iter().zip(&k2) {
            assert!((a / 2.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn circle_curvature_across_radii() {
        for radius in [20.0, 45.0, 120.0, 300.0, 500.0] {
            let k = menger_curvature(&circle(radius, 64, 3.0)).unwrap();
            assert!(k.iter().all(|v| (v * radius - 1.0).abs() < 0.01), "radius {radius}");
        }
    }

    #[test]
    fn curvature_errors() {
        assert!(matches!(menger_curvature(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), Err(Error::DuplicatePoint(1))));
        assert!(menger_curvature(&[[0.0, 0.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn force_bound_example() {
        let cfg = TerrainConfig::default();
        let ratio = cfg.fc_max * 100.0 / (cfg.mass * cfg.v * cfg.v);
        assert!((ratio - 0.596).abs() < 1e-3);
        let rc = critical_gradient(0.01, &cfg);
        assert!((rc - 1.35).abs() < 5e-3);
        assert_eq!(rc.min(cfg.rho_max), 0.05);
        assert_eq!(critical_gradient(0.0, &cfg), 0.0);
        assert!(critical_gradient(f64::INFINITY, &cfg) > 1e6);
    }

    #[test]
    fn constant_slope_integral() {
        let line: Vec<Point2> = (0..=10).map(|i| [i as f64 * 10.0, 0.0]).collect();
        let z = elevation_profile(&[0.05; 11], &line).unwrap();
        assert!((z[10] - 5.0).abs() < 1e-12);
        assert!(elevation_profile(&[0.05; 3], &line).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TerrainConfig { v: 0.0, ..Default::default() }.validate().is_err());
        assert!(TerrainConfig { rho_max: 0.2, ..Default::default() }.validate().is_err());
        assert!(TerrainConfig { window: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn flyover_ramp_respects_bound_and_reaches_clearance() {
        let cfg = TerrainConfig::default();
        let m = toy_metric(ScenarioType::Flyover, 3, 0, 64);
        let lifted = lift_scenario(&m, &cfg).unwrap();
        let peak = lifted
            .scenario
            .roads
            .iter()
            .map(|r| r.points.iter().map(|p| p[2]).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        assert!((peak - cfg.flyover_clearance).abs() < 0.5, "{peak}");
        for r in &lifted.scenario.roads {
            assert!(r.max_gradient() <= cfg.rho_max + 1e-12);
        }
    }

    #[test]
    fn degenerate_roads_are_dropped() {
        let m = MetricScenario {
            origin: ShapePoint { lat: 0.0, lng: 0.0 },
            scenario_type: ScenarioType::Pudo,
            roads: vec![vec![[1.0, 1.0], [1.0, 1.0]], vec![[0.0, 0.0], [0.0, 0.0], [5.0, 0.0], [9.0, 1.0]]],
        };
        let l = lift_scenario(&m, &TerrainConfig::default()).unwrap();
        assert_eq!(l.dropped_roads, 1);
        assert_eq!(l.scenario.roads[0].points.len(), 3);
    }

    proptest! {
        #[test]
        fn gradient_bounded_for_any_polyline(seed in 0u64..2000, rho_max in 0.01f64..0.15) {
            let mut r = rng::stream(seed, 4, 0);
            let n = r.random_range(3..40);
            let road: Vec<Point2> = (0..n).map(|_| [r.random_range(-100.0..100.0), r.random_range(-100.0..100.0)]).collect();
            let ty = ScenarioType::ALL[(seed % 4) as usize];
            let cfg = TerrainConfig { rho_max, ..Default::default() };
            let m = MetricScenario { origin: ShapePoint { lat: 0.0, lng: 0.0 }, scenario_type: ty, roads: vec![road.clone(), road] };
            let l = lift_scenario(&m, &cfg).unwrap();
            for road in &l.scenario.roads {
                prop_assert!(road.max_gradient() <= rho_max + 1e-12);
            }
            let rho = slope_profile(&m.roads[0], &cfg).unwrap();
            prop_assert!(rho.iter().all(|v| (0.0..=rho_max).contains(v)));
        }
    }
}

//! Procedural toy scenarios, one family per scenario type, for overfit runs
//! and fixtures.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::Result;
use crate::geo::{normalize_metric, MetricScenario, RoadScenario, ScenarioType, ShapePoint};
use crate::geometry::{rigid_transform, Point2};
use crate::rng;

const DOMAIN_SYNTH: u64 = 0x7379_6e74;

fn line(a: Point2, b: Point2, k: usize) -> Vec<Point2> {
    (0..k)
        .map(|i| {
            let u = i as f64 / (k - 1) as f64;
            [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
        })
        .collect()
}

fn arc(center: Point2, radius: f64, from: f64, to: f64, k: usize) -> Vec<Point2> {
    (0..k)
        .map(|i| {
            let a = from + (to - from) * i as f64 / (k - 1) as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect()
}

/// Smooth lateral shift of `d` meters between `x0` and `x1` along +x.
fn pull_off(x_start: f64, x_end: f64, y: f64, d: f64, k: usize) -> Vec<Point2> {
    (0..k)
        .map(|i| {
            let u = i as f64 / (k - 1) as f64;
            let bump = (PI * u).sin().powi(2);
            [x_start + u * (x_end - x_start), y + d * bump]
        })
        .collect()
}

/// Metric roads of one toy scenario, before rotation.
fn roads_for(ty: ScenarioType, r: &mut impl Rng, k: usize) -> Vec<Vec<Point2>> {
    let reach = r.random_range(150.0..180.0);
    match ty {
        ScenarioType::Intersection => {
            let skew = r.random_range(-0.15..0.15);
            (0..4)
                .map(|arm| {
                    let a = arm as f64 * PI / 2.0 + if arm % 2 == 1 { skew } else { 0.0 };
                    line([0.0, 0.0], [reach * a.cos(), reach * a.sin()], k)
                })
                .collect()
        }
        ScenarioType::Pudo => {
            let gap = r.random_range(12.0..18.0);
            let bay = r.random_range(8.0..12.0);
            vec![
                line([-reach, 0.0], [reach, 0.0], k),
                line([reach, gap], [-reach, gap], k),
                pull_off(-0.6 * reach, 0.6 * reach, 0.0, -bay, k),
                line([0.0, gap], [0.0, reach], k),
            ]
        }
        ScenarioType::Roundabout => {
            let ring = r.random_range(35.0..45.0);
            vec![
                arc([0.0, 0.0], ring, 0.0, PI, k),
                arc([0.0, 0.0], ring, PI, 2.0 * PI, k),
                line([ring, 0.0], [reach, 0.0], k),
                line([-ring, 0.0], [-reach, 0.0], k),
            ]
        }
        ScenarioType::Flyover => {
            let cross = r.random_range(0.9..1.2);
            let ramp = r.random_range(55.0..70.0);
            vec![
                line([-reach, 0.0], [reach, 0.0], k),
                line([-reach * cross.cos(), -reach * cross.sin()], [reach * cross.cos(), reach * cross.sin()], k),
                arc([ramp, -ramp], ramp, PI / 2.0, PI, k),
                arc([-ramp, ramp], ramp, -PI / 2.0, 0.0, k),
            ]
        }
    }
}

/// One toy scenario in meters about the origin.
pub fn toy_metric(ty: ScenarioType, seed: u64, index: u64, k: usize) -> MetricScenario {
    let mut r = rng::stream(seed, DOMAIN_SYNTH, index);
    let angle = r.random_range(-PI..PI);
    let roads = roads_for(ty, &mut r, k)
        .into_iter()
        .map(|road| road.into_iter().map(|p| rigid_transform(p, angle, [0.0, 0.0])).collect())
        .collect();
    MetricScenario {
        origin: ShapePoint { lat: 0.0, lng: 0.0 },
        scenario_type: ty,
        roads,
    }
}

/// `count` normalized scenarios cycling through the four types; roads beyond
/// the four per scenario are padding.
pub fn toy_dataset(count: usize, seed: u64, n: usize, k: usize, half_extent_m: f64) -> Result<Vec<RoadScenario>> {
    (0..count)
        .map(|i| {
            let ty = ScenarioType::ALL[i % 4];
            normalize_metric(&toy_metric(ty, seed, i as u64, k), n, k, half_extent_m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polyline_length;

    #[test]
    fn dataset_is_deterministic_and_well_formed() {
        let a = toy_dataset(8, 3, 4, 16, 200.0).unwrap();
        let b = toy_dataset(8, 3, 4, 16, 200.0).unwrap();
        assert_eq!(a, b);
        for (i, s) in a.iter().enumerate() {
            assert!(s.is_well_formed());
            assert_eq!(s.valid_roads(), 4);
            assert_eq!(s.scenario_type, ScenarioType::ALL[i % 4]);
            assert_eq!(s.condition.scenario_type(), Some(s.scenario_type));
        }
        assert_ne!(a[0].points, a[4].points);
    }

    #[test]
    fn extra_roads_are_padding() {
        let s = toy_dataset(1, 0, 6, 16, 200.0).unwrap().remove(0);
        assert_eq!(s.mask, [true, true, true, true, false, false]);
    }

    #[test]
    fn roads_fit_the_extent() {
        for ty in ScenarioType::ALL {
            let m = toy_metric(ty, 9, 0, 32);
            for road in &m.roads {
                assert!(polyline_length(road) > 30.0);
                assert!(road.iter().all(|p| p[0].abs() < 200.0 && p[1].abs() < 200.0));
            }
        }
    }
}

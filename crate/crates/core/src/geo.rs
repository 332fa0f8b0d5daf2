//! Road-scenario data model: projection, fixed-length resampling,
//! scenario extraction and normalization into the diffusion tensor layout.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point2};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const DEFAULT_ROADS: usize = 12;
pub const DEFAULT_POINTS: usize = 64;
pub const DEFAULT_HALF_EXTENT_M: f64 = 200.0;
/// Extent that maps to a scale condition of 1.
pub const SCALE_REFERENCE_M: f64 = 500.0;
/// Junction count that maps to a junction condition of 1.
pub const JUNCTION_REFERENCE: f64 = 8.0;
pub const JUNCTION_RADIUS_M: f64 = 10.0;

/// WGS84 vertex of a road polyline, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePoint {
    pub lat: f64,
    pub lng: f64,
}

impl ShapePoint {
    pub fn new(lat: f64, lng: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lng) {
            return Err(Error::Config(alloc::format!("coordinate ({lat}, {lng}) outside WGS84 range")));
        }
        Ok(Self { lat, lng })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRoad {
    pub id: String,
    pub points: Vec<ShapePoint>,
    pub highway_class: String,
}

impl RawRoad {
    /// Builds a road, dropping consecutive duplicates. Fails with fewer than
    /// two distinct points.
    pub fn new(id: impl Into<String>, points: Vec<ShapePoint>, highway_class: impl Into<String>) -> Result<Self> {
        let mut clean: Vec<ShapePoint> = Vec::with_capacity(points.len());
        for p in points {
            if clean.last() != Some(&p) {
                clean.push(p);
            }
        }
        if clean.len() < 2 {
            return Err(Error::Degenerate("road needs at least two distinct points".into()));
        }
        Ok(Self {
            id: id.into(),
            points: clean,
            highway_class: highway_class.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioType {
    Intersection,
    Pudo,
    Roundabout,
    Flyover,
}

impl ScenarioType {
    pub const ALL: [ScenarioType; 4] = [Self::Intersection, Self::Pudo, Self::Roundabout, Self::Flyover];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Intersection => "intersection",
            Self::Pudo => "pudo",
            Self::Roundabout => "roundabout",
            Self::Flyover => "flyover",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScenario {
    pub center: ShapePoint,
    pub roads: Vec<RawRoad>,
    pub scenario_type: ScenarioType,
}

/// Road attributes the generator is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    pub type_onehot: [f64; 4],
    pub scale: f64,
    pub junction_count: f64,
}

impl ConditionVector {
    pub const DIM: usize = 6;

    pub fn new(scenario_type: ScenarioType, half_extent_m: f64, junctions: usize) -> Self {
        let mut type_onehot = [0.0; 4];
        type_onehot[scenario_type.index()] = 1.0;
        Self {
            type_onehot,
            scale: (half_extent_m / SCALE_REFERENCE_M).clamp(0.0, 1.0),
            junction_count: (junctions as f64 / JUNCTION_REFERENCE).clamp(0.0, 1.0),
        }
    }

    pub fn scenario_type(&self) -> Option<ScenarioType> {
        let hot: Vec<usize> = (0..4).filter(|&i| self.type_onehot[i] != 0.0).collect();
        if hot.len() == 1 {
            Some(ScenarioType::ALL[hot[0]])
        } else {
            None
        }
    }

    pub fn is_valid(&self) -> bool {
        self.scenario_type().is_some() && self.as_array().iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn as_array(&self) -> [f64; Self::DIM] {
        let t = self.type_onehot;
        [t[0], t[1], t[2], t[3], self.scale, self.junction_count]
    }
}

/// Normalized `n x k x 2` scenario tensor with its denormalization metadata.
///
/// `points` is road-major: road `r`, point `p`, axis `a` lives at
/// `(r * k + p) * 2 + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadScenario {
    pub n: usize,
    pub k: usize,
    pub points: Vec<f64>,
    pub mask: Vec<bool>,
    pub origin: ShapePoint,
    pub half_extent_m: f64,
    pub scenario_type: ScenarioType,
    pub condition: ConditionVector,
}

impl RoadScenario {
    pub fn point(&self, road: usize, p: usize) -> Point2 {
        let i = (road * self.k + p) * 2;
        [self.points[i], self.points[i + 1]]
    }

    pub fn road(&self, road: usize) -> Vec<Point2> {
        (0..self.k).map(|p| self.point(road, p)).collect()
    }

    pub fn valid_roads(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Channel-major view used by the network: channel `2r` holds x of road
    /// `r`, channel `2r + 1` holds y.
    pub fn to_channels(&self) -> Vec<f64> {
        let (n, k) = (self.n, self.k);
        let mut out = vec![0.0; n * 2 * k];
        for r in 0..n {
            for p in 0..k {
                for a in 0..2 {
                    out[(2 * r + a) * k + p] = self.points[(r * k + p) * 2 + a];
                }
            }
        }
        out
    }

    /// Inverse of [`RoadScenario::to_channels`]; values are clamped to [-1, 1].
    pub fn set_from_channels(&mut self, channels: &[f64]) {
        let (n, k) = (self.n, self.k);
        assert_eq!(channels.len(), n * 2 * k);
        for r in 0..n {
            for p in 0..k {
                for a in 0..2 {
                    self.points[(r * k + p) * 2 + a] = channels[(2 * r + a) * k + p].clamp(-1.0, 1.0);
                }
            }
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.points.len() == self.n * self.k * 2
            && self.mask.len() == self.n
            && self.points.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v))
    }
}

/// Scenario in local metric coordinates (meters east/north of `origin`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScenario {
    pub origin: ShapePoint,
    pub scenario_type: ScenarioType,
    pub roads: Vec<Vec<Point2>>,
}

/// Equirectangular projection about `origin`.
pub fn project_to_local(points: &[ShapePoint], origin: ShapePoint) -> Result<Vec<Point2>> {
    points
        .iter()
        .map(|p| {
            if (p.lat - origin.lat).abs() > 1.0 || (p.lng - origin.lng).abs() > 1.0 {
                return Err(Error::OutOfProjectionRange { lat: p.lat, lng: p.lng });
            }
            Ok(project_unchecked(*p, origin))
        })
        .collect()
}

fn project_unchecked(p: ShapePoint, origin: ShapePoint) -> Point2 {
    let k = PI / 180.0 * EARTH_RADIUS_M;
    [
        (p.lng - origin.lng) * (origin.lat * PI / 180.0).cos() * k,
        (p.lat - origin.lat) * k,
    ]
}

/// Inverse of [`project_to_local`].
pub fn unproject(p: Point2, origin: ShapePoint) -> ShapePoint {
    let k = PI / 180.0 * EARTH_RADIUS_M;
    ShapePoint {
        lat: origin.lat + p[1] / k,
        lng: origin.lng + p[0] / (k * (origin.lat * PI / 180.0).cos()),
    }
}

pub fn haversine_m(a: ShapePoint, b: ShapePoint) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = la2 - la1;
    let dlng = (b.lng - a.lng).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlng / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

/// Resamples a polyline to `k` points at equal arc-length spacing. The first
/// and last input points are reproduced exactly.
pub fn resample_road(polyline: &[Point2], k: usize) -> Result<Vec<Point2>> {
    if k < 2 {
        return Err(Error::Config("resampling needs k >= 2".into()));
    }
    if polyline.len() < 2 {
        return Err(Error::Degenerate("polyline needs at least two points".into()));
    }
    let cum = geometry::cumulative_length(polyline);
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::ZeroLength);
    }
    let mut out = Vec::with_capacity(k);
    out.push(polyline[0]);
    let mut seg = 0;
    for i in 1..k - 1 {
        let target = total * i as f64 / (k - 1) as f64;
        while seg + 1 < polyline.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
        let (a, b) = (polyline[seg], polyline[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out.push(*polyline.last().unwrap());
    Ok(out)
}

/// Picks the `n` roads whose nearest vertex is closest to `center`, nearest
/// first; ties are broken by road id.
pub fn extract_scenario(roads: &[RawRoad], center: ShapePoint, n: usize, scenario_type: ScenarioType) -> Result<RawScenario> {
    if n == 0 {
        return Err(Error::Config("scenario road count must be at least 1".into()));
    }
    if roads.is_empty() {
        return Err(Error::Empty("road list"));
    }
    let mut ranked: Vec<(f64, &RawRoad)> = roads
        .iter()
        .map(|r| {
            let d = r
                .points
                .iter()
                .map(|p| geometry::dist(project_unchecked(*p, center), [0.0, 0.0]))
                .fold(f64::INFINITY, f64::min);
            (d, r)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(RawScenario {
        center,
        roads: ranked.into_iter().take(n).map(|(_, r)| r.clone()).collect(),
        scenario_type,
    })
}

/// Counts junctions: clusters (within `radius`) of road ends, crossings and
/// T-contacts where at least three road arms meet.
pub fn detect_junctions(roads: &[Vec<Point2>], radius: f64) -> Vec<Point2> {
    // (location, road index, arms contributed)
    let mut cands: Vec<(Point2, usize, u32)> = Vec::new();
    for (ri, road) in roads.iter().enumerate() {
        if road.len() < 2 {
            continue;
        }
        cands.push((road[0], ri, 1));
        cands.push((*road.last().unwrap(), ri, 1));
    }
    for i in 0..roads.len() {
        for j in (i + 1)..roads.len() {
            for a in roads[i].windows(2) {
                for b in roads[j].windows(2) {
                    if let Some(p) = geometry::segment_crossing(a[0], a[1], b[0], b[1]) {
                        cands.push((p, i, 2));
                        cands.push((p, j, 2));
                    }
                }
            }
        }
    }
    for (ri, road) in roads.iter().enumerate() {
        if road.len() < 2 {
            continue;
        }
        for end in [road[0], *road.last().unwrap()] {
            for (oj, other) in roads.iter().enumerate() {
                if oj == ri || other.len() < 2 {
                    continue;
                }
                let (d, q, _) = geometry::distance_to_polyline(end, other);
                let near_other_end =
                    geometry::dist(q, other[0]) <= radius || geometry::dist(q, *other.last().unwrap()) <= radius;
                if d <= radius && !near_other_end {
                    cands.push((q, oj, 2));
                }
            }
        }
    }
    let locs: Vec<Point2> = cands.iter().map(|c| c.0).collect();
    let labels = geometry::cluster_points(&locs, radius);
    let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = Vec::new();
    for cl in 0..clusters {
        // Per road keep the largest contribution, then sum arms.
        let mut per_road: Vec<(usize, u32)> = Vec::new();
        let mut centroid = [0.0, 0.0];
        let mut count = 0.0;
        for (c, &l) in cands.iter().zip(&labels) {
            if l != cl {
                continue;
            }
            centroid[0] += c.0[0];
            centroid[1] += c.0[1];
            count += 1.0;
            match per_road.iter_mut().find(|(r, _)| *r == c.1) {
                Some(e) => e.1 = e.1.max(c.2),
                None => per_road.push((c.1, c.2)),
            }
        }
        let arms: u32 = per_road.iter().map(|e| e.1).sum();
        if arms >= 3 {
            out.push([centroid[0] / count, centroid[1] / count]);
        }
    }
    out
}

/// Resamples, normalizes and pads a metric scenario into the tensor layout.
pub fn normalize_metric(scenario: &MetricScenario, n: usize, k: usize, half_extent_m: f64) -> Result<RoadScenario> {
    if !(half_extent_m > 0.0) {
        return Err(Error::Config("half_extent_m must be positive".into()));
    }
    if n == 0 || k < 2 {
        return Err(Error::Config("need n >= 1 and k >= 2".into()));
    }
    let junctions = detect_junctions(&scenario.roads, JUNCTION_RADIUS_M).len();
    let mut points = vec![0.0; n * k * 2];
    let mut mask = vec![false; n];
    for (r, road) in scenario.roads.iter().take(n).enumerate() {
        // Roads already carrying k points are taken as resampled.
        let resampled = if road.len() == k {
            road.clone()
        } else {
            resample_road(road, k)?
        };
        for (p, q) in resampled.iter().enumerate() {
            for a in 0..2 {
                points[(r * k + p) * 2 + a] = (q[a] / half_extent_m).clamp(-1.0, 1.0);
            }
        }
        mask[r] = true;
    }
    Ok(RoadScenario {
        n,
        k,
        points,
        mask,
        origin: scenario.origin,
        half_extent_m,
        scenario_type: scenario.scenario_type,
        condition: ConditionVector::new(scenario.scenario_type, half_extent_m, junctions),
    })
}

/// Projects about the scenario center, then [`normalize_metric`].
pub fn normalize_scenario(raw: &RawScenario, n: usize, k: usize, half_extent_m: f64) -> Result<RoadScenario> {
    let roads = raw
        .roads
        .iter()
        .map(|r| project_to_local(&r.points, raw.center))
        .collect::<Result<Vec<_>>>()?;
    normalize_metric(
        &MetricScenario {
            origin: raw.center,
            scenario_type: raw.scenario_type,
            roads,
        },
        n,
        k,
        half_extent_m,
    )
}

/// Back to meters; padded roads are dropped.
pub fn denormalize(s: &RoadScenario) -> Result<MetricScenario> {
    if !(s.half_extent_m > 0.0) || !s.half_extent_m.is_finite() {
        return Err(Error::MissingMetadata("half_extent_m"));
    }
    if s.mask.len() != s.n || s.points.len() != s.n * s.k * 2 {
        return Err(Error::MissingMetadata("mask"));
    }
    let roads = (0..s.n)
        .filter(|&r| s.mask[r])
        .map(|r| {
            s.road(r)
                .into_iter()
                .map(|p| [p[0] * s.half_extent_m, p[1] * s.half_extent_m])
                .collect()
        })
        .collect();
    Ok(MetricScenario {
        origin: s.origin,
        scenario_type: s.scenario_type,
        roads,
    })
}

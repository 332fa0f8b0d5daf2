//! OpenDRIVE 1.6 subset: line plan views, linear elevation records and a
//! single two-lane section per road.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{OpenDriveError, Result};
use crate::terrain::Scenario3d;

pub const LANE_WIDTH_M: f64 = 3.5;
const S_TOL: f64 = 1e-9;
const ENDPOINT_TOL: f64 = 1e-6;
const ELEVATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub rev_major: u16,
    pub rev_minor: u16,
    pub name: String,
    /// PROJ string of the local frame, when known.
    pub geo_reference: Option<String>,
    /// Provenance key-value pairs written as `userData`.
    pub user_data: Vec<(String, String)>,
}

impl Header {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            rev_major: 1,
            rev_minor: 6,
            name: name.into(),
            geo_reference: None,
            user_data: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineGeometry {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub hdg: f64,
    pub length: f64,
}

impl LineGeometry {
    pub fn end(&self) -> [f64; 2] {
        [self.x + self.length * self.hdg.cos(), self.y + self.length * self.hdg.sin()]
    }
}

/// `z(ds) = a + b ds + c ds^2 + d ds^3` from `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elevation {
    pub s: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Elevation {
    pub fn eval(&self, s: f64) -> f64 {
        let ds = s - self.s;
        self.a + ds * (self.b + ds * (self.c + ds * self.d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XodrRoad {
    pub id: String,
    pub name: String,
    pub length: f64,
    pub plan_view: Vec<LineGeometry>,
    pub elevation: Vec<Elevation>,
    /// Width of the single driving lane on each side.
    pub lane_width: f64,
}

impl XodrRoad {
    /// Polyline vertices with elevation, one per segment start plus the end.
    pub fn points(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.plan_view.len() + 1);
        for g in &self.plan_view {
            out.push([g.x, g.y, self.elevation_at(g.s)]);
        }
        if let Some(g) = self.plan_view.last() {
            let e = g.end();
            out.push([e[0], e[1], self.elevation_at(g.s + g.length)]);
        }
        out
    }

    pub fn elevation_at(&self, s: f64) -> f64 {
        let idx = self.elevation.partition_point(|e| e.s <= s);
        match idx {
            0 => self.elevation.first().map_or(0.0, |e| e.a),
            i => self.elevation[i - 1].eval(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenDriveDocument {
    pub header: Header,
    pub roads: Vec<XodrRoad>,
}

/// Export outcome with the number of zero-length segments skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Exported {
    pub document: OpenDriveDocument,
    pub skipped_segments: usize,
}

/// One road per scenario road, one line segment per consecutive point pair.
pub fn export_opendrive(scenario: &Scenario3d, header: Header) -> Result<Exported> {
    let mut roads = Vec::with_capacity(scenario.roads.len());
    let mut skipped = 0;
    for (i, road) in scenario.roads.iter().enumerate() {
        let id = (i + 1).to_string();
        if road.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OpenDriveError::Invariant(format!("road {id} has non-finite coordinates")).into());
        }
        let mut plan_view = Vec::new();
        let mut elevation = Vec::new();
        let mut s = 0.0;
        let mut start = match road.points.first() {
            Some(p) => *p,
            None => return Err(OpenDriveError::Invariant(format!("road {id} has no points")).into()),
        };
        for p in &road.points[1..] {
            let (dx, dy) = (p[0] - start[0], p[1] - start[1]);
            let length = dx.hypot(dy);
            if length == 0.0 {
                skipped += 1;
                continue;
            }
            plan_view.push(LineGeometry {
                s,
                x: start[0],
                y: start[1],
                hdg: dy.atan2(dx),
                length,
            });
            elevation.push(Elevation {
                s,
                a: start[2],
                b: (p[2] - start[2]) / length,
                c: 0.0,
                d: 0.0,
            });
            s += length;
            start = *p;
        }
        if plan_view.is_empty() {
            return Err(OpenDriveError::Invariant(format!("road {id} has zero length")).into());
        }
        roads.push(XodrRoad {
            id,
            name: format!("{}_{}", scenario.scenario_type.name(), i + 1),
            length: s,
            plan_view,
            elevation,
            lane_width: LANE_WIDTH_M,
        });
    }
    let document = OpenDriveDocument { header, roads };
    validate(&document)?;
    Ok(Exported {
        document,
        skipped_segments: skipped,
    })
}

fn continuity(road: &XodrRoad, detail: String) -> OpenDriveError {
    OpenDriveError::Continuity {
        road: road.id.clone(),
        detail,
    }
}

/// Structural invariants every exported or parsed document satisfies.
pub fn validate(doc: &OpenDriveDocument) -> Result<(), OpenDriveError> {
    if doc.roads.is_empty() {
        return Err(OpenDriveError::Invariant("document has no roads".into()));
    }
    for (i, r) in doc.roads.iter().enumerate() {
        if doc.roads[..i].iter().any(|o| o.id == r.id) {
            return Err(OpenDriveError::Invariant(format!("duplicate road id {}", r.id)));
        }
        if !(r.length > 0.0 && r.length.is_finite()) {
            return Err(OpenDriveError::Invariant(format!("road {} has length {}", r.id, r.length)));
        }
        if !(r.lane_width > 0.0) {
            return Err(OpenDriveError::Invariant(format!("road {} has lane width {}", r.id, r.lane_width)));
        }
        if r.plan_view.is_empty() {
            return Err(continuity(r, "empty plan view".into()));
        }
        let mut s = 0.0;
        for (j, g) in r.plan_view.iter().enumerate() {
            if !(g.length > 0.0) {
                return Err(continuity(r, format!("geometry {j} has length {}", g.length)));
            }
            if (g.s - s).abs() > S_TOL {
                return Err(continuity(r, format!("geometry {j} starts at s = {} instead of {s}", g.s)));
            }
            if j > 0 {
                let e = r.plan_view[j - 1].end();
                let gap = (e[0] - g.x).hypot(e[1] - g.y);
                if gap > ENDPOINT_TOL {
                    return Err(continuity(r, format!("geometry {j} starts {gap} m from the previous end")));
                }
            }
            s = g.s + g.length;
        }
        if (s - r.length).abs() > S_TOL {
            return Err(continuity(r, format!("segments sum to {s}, road length is {}", r.length)));
        }
        if r.elevation.is_empty() {
            return Err(continuity(r, "empty elevation profile".into()));
        }
        if r.elevation[0].s.abs() > S_TOL {
            return Err(continuity(r, "elevation profile does not start at s = 0".into()));
        }
        for w in r.elevation.windows(2) {
            if !(w[1].s > w[0].s) || w[1].s > r.length + S_TOL {
                return Err(continuity(r, format!("elevation record at s = {} out of order", w[1].s)));
            }
            let gap = (w[0].eval(w[1].s) - w[1].a).abs();
            if gap > ELEVATION_TOL {
                return Err(continuity(r, format!("elevation jumps by {gap} m at s = {}", w[1].s)));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{ScenarioType, ShapePoint};
    use crate::terrain::{lift_scenario, Road3d, TerrainConfig};
    use crate::synth::toy_metric;

    fn scenario(roads: Vec<Vec<[f64; 3]>>) -> Scenario3d {
        Scenario3d {
            origin: ShapePoint { lat: 0.0, lng: 0.0 },
            scenario_type: ScenarioType::Flyover,
            roads: roads.into_iter().map(|points| Road3d { points }).collect(),
        }
    }

    #[test]
    fn straight_road() {
        let doc = export_opendrive(&scenario(vec![vec![[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]]]), Header::new("t")).unwrap().document;
        let r = &doc.roads[0];
        assert_eq!(r.plan_view.len(), 1);
        assert_eq!((r.plan_view[0].hdg, r.plan_view[0].length), (0.0, 100.0));
        assert_eq!((r.elevation[0].a, r.elevation[0].b), (0.0, 0.0));
        assert_eq!(doc.header.rev_minor, 6);
    }

    #[test]
    fn climbing_road() {
        let pts = vec![[0.0, 0.0, 0.0], [100.0, 0.0, 5.0], [150.0, 0.0, 5.0]];
        let doc = export_opendrive(&scenario(vec![pts]), Header::new("t")).unwrap().document;
        let e = &doc.roads[0].elevation;
        assert!((e[0].b - 0.05).abs() < 1e-15);
        assert!((e[1].a - 5.0).abs() < 1e-12);
        assert!((doc.roads[0].elevation_at(50.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn unique_ids_and_round_trip_points() {
        let m = toy_metric(ScenarioType::Roundabout, 4, 0, 32);
        let s3 = lift_scenario(&m, &TerrainConfig::default()).unwrap().scenario;
        let doc = export_opendrive(&s3, Header::new("toy")).unwrap().document;
        assert_eq!(doc.roads.len(), s3.roads.len());
        for (r, src) in doc.roads.iter().zip(&s3.roads) {
            for (a, b) in r.points().iter().zip(&src.points) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }
            let sum: f64 = r.plan_view.iter().map(|g| g.length).sum();
            assert!((sum - r.length).abs() < 1e-9);
        }
        let mut ids: Vec<_> = doc.roads.iter().map(|r| r.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), doc.roads.len());
    }

    #[test]
    fn zero_length_segments() {
        let pts = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let out = export_opendrive(&scenario(vec![pts]), Header::new("t")).unwrap();
        assert_eq!(out.skipped_segments, 1);
        assert_eq!(out.document.roads[0].plan_view.len(), 1);
        let flat = vec![[3.0, 3.0, 0.0], [3.0, 3.0, 0.0]];
        assert!(matches!(
            export_opendrive(&scenario(vec![flat]), Header::new("t")),
            Err(crate::Error::OpenDrive(OpenDriveError::Invariant(_)))
        ));
    }

    #[test]
    fn validation_catches_gaps() {
        let doc = export_opendrive(&scenario(vec![vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [20.0, 5.0, 1.0]]]), Header::new("t"))
            .unwrap()
            .document;
        let mut gap = doc.clone();
        gap.roads[0].plan_view[1].s += 0.5;
        assert!(matches!(validate(&gap), Err(OpenDriveError::Continuity { .. })));
        let mut jump = doc.clone();
        jump.roads[0].elevation[1].a += 0.1;
        assert!(matches!(validate(&jump), Err(OpenDriveError::Continuity { .. })));
        let mut moved = doc.clone();
        moved.roads[0].plan_view[1].x += 0.01;
        assert!(matches!(validate(&moved), Err(OpenDriveError::Continuity { .. })));
        let mut dup = doc.clone();
        dup.roads.push(dup.roads[0].clone());
        assert!(matches!(validate(&dup), Err(OpenDriveError::Invariant(_))));
        let empty = OpenDriveDocument { header: Header::new("e"), roads: Vec::new() };
        assert!(validate(&empty).is_err());
    }
}

//! Line-delimited JSON scenario files. Training datasets and generated
//! libraries share one record schema; libraries also fill `seed` and, after
//! evaluation, `score`.

use std::fs;
use std::io::Write;
use std::path::Path;

use diffroad_core::geo::{ConditionVector, RoadScenario, ScenarioType, ShapePoint};
use diffroad_core::scene_eval::ScenarioScore;
use diffroad_core::terrain::{Road3d, Scenario3d};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub w1: f64,
    pub w2: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub accepted: bool,
}

impl ScoreRecord {
    pub fn new(score: &ScenarioScore, s_min: f64) -> Self {
        Self {
            w1: score.w1,
            w2: score.w2,
            s: score.s,
            accepted: score.s >= s_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub scenario_type: ScenarioType,
    pub half_extent_m: f64,
    pub origin: ShapePoint,
    pub mask: Vec<bool>,
    pub condition: ConditionVector,
    /// `n x k x 2` normalized coordinates.
    pub points: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl ScenarioRecord {
    pub fn from_scenario(id: impl Into<String>, s: &RoadScenario) -> Self {
        Self {
            id: id.into(),
            scenario_type: s.scenario_type,
            half_extent_m: s.half_extent_m,
            origin: s.origin,
            mask: s.mask.clone(),
            condition: s.condition,
            points: (0..s.n).map(|r| s.road(r)).collect(),
            seed: None,
            score: None,
            config_hash: None,
        }
    }

    pub fn to_scenario(&self) -> std::result::Result<RoadScenario, String> {
        let n = self.points.len();
        let k = self.points.first().map_or(0, Vec::len);
        if n == 0 || k < 2 || self.points.iter().any(|r| r.len() != k) {
            return Err(format!("points must be n x k x 2 with k >= 2 (found {n} roads)"));
        }
        if self.mask.len() != n {
            return Err(format!("mask has {} entries for {n} roads", self.mask.len()));
        }
        let s = RoadScenario {
            n,
            k,
            points: self.points.iter().flatten().flatten().copied().collect(),
            mask: self.mask.clone(),
            origin: self.origin,
            half_extent_m: self.half_extent_m,
            scenario_type: self.scenario_type,
            condition: self.condition,
        };
        if !s.is_well_formed() {
            return Err("coordinates must be finite and within [-1, 1]".into());
        }
        if !(self.half_extent_m > 0.0) {
            return Err("half_extent_m must be positive".into());
        }
        if !self.condition.is_valid() {
            return Err("condition vector is invalid".into());
        }
        Ok(s)
    }
}

/// Terrain-lifted scenario in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario3dRecord {
    pub id: String,
    #[serde(rename = "type")]
    pub scenario_type: ScenarioType,
    pub origin: ShapePoint,
    pub roads: Vec<Vec<[f64; 3]>>,
    pub dropped_roads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Scenario3dRecord {
    pub fn to_scenario(&self) -> Scenario3d {
        Scenario3d {
            origin: self.origin,
            scenario_type: self.scenario_type,
            roads: self.roads.iter().map(|r| Road3d { points: r.clone() }).collect(),
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AppError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.write_all(b"\n").expect("write to memory");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    fs::write(path, buf).map_err(AppError::io(path))
}

/// Reads a dataset or library and converts every record.
pub fn read_scenarios(path: &Path) -> Result<Vec<(ScenarioRecord, RoadScenario)>> {
    let records: Vec<ScenarioRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let s = r.to_scenario().map_err(|message| AppError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })?;
            Ok((r, s))
        })
        .collect()
}

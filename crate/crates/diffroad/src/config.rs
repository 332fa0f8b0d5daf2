//! Pipeline configuration file (TOML).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use diffroad_core::geo::ScenarioType;
use diffroad_core::nn::UNetConfig;
use diffroad_core::sampling::SamplerConfig;
use diffroad_core::scene_eval::EvalConfig;
use diffroad_core::terrain::TerrainConfig;
use diffroad_core::train::TrainingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};
use crate::ingest::{CenterSpec, ScenarioShape, DEFAULT_ENDPOINT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Train,
    Sample,
    Terrain,
    Evaluate,
    Metrics,
    Export,
}

impl Stage {
    pub const ORDER: [Stage; 7] = [
        Stage::Ingest,
        Stage::Train,
        Stage::Sample,
        Stage::Terrain,
        Stage::Evaluate,
        Stage::Metrics,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Sample => "sample",
            Stage::Terrain => "terrain",
            Stage::Evaluate => "evaluate",
            Stage::Metrics => "metrics",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Geojson,
    Overpass,
    /// Procedural toy scenarios, for desk-scale runs without map data.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub source: Source,
    pub roads: usize,
    pub points: usize,
    pub half_extent_m: f64,
    /// Highway classes to keep; empty keeps all.
    pub classes: Vec<String>,
    /// Centers in addition to labelled points found in the GeoJSON input.
    pub centers: Vec<CenterSpec>,
    pub endpoint: String,
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
    pub timeout_s: u64,
    pub synthetic_count: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            source: Source::Geojson,
            roads: ScenarioShape::default().roads,
            points: ScenarioShape::default().points,
            half_extent_m: ScenarioShape::default().half_extent_m,
            classes: Vec::new(),
            centers: Vec::new(),
            endpoint: DEFAULT_ENDPOINT.into(),
            cache_dir: None,
            offline: false,
            timeout_s: 60,
            synthetic_count: 8,
        }
    }
}

impl IngestConfig {
    pub fn shape(&self) -> ScenarioShape {
        ScenarioShape {
            roads: self.roads,
            points: self.points,
            half_extent_m: self.half_extent_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Toy,
    Reduced,
}

/// Network preset sized to the ingest shape, with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    pub base_channels: Option<usize>,
    pub channel_mults: Option<Vec<usize>>,
    pub res_blocks: Option<usize>,
    pub attention_stages: Option<usize>,
    pub mid_attention: Option<bool>,
    pub groups: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Full,
            base_channels: None,
            channel_mults: None,
            res_blocks: None,
            attention_stages: None,
            mid_attention: None,
            groups: None,
        }
    }
}

impl ModelConfig {
    pub fn resolve(&self, shape: &ScenarioShape) -> UNetConfig {
        let (n, k) = (shape.roads, shape.points);
        let mut c = match self.preset {
            Preset::Full => UNetConfig::full(n, k),
            Preset::Toy => UNetConfig::toy(n, k),
            Preset::Reduced => UNetConfig::reduced(n, k),
        };
        if let Some(v) = self.base_channels {
            c.base_channels = v;
        }
        if let Some(v) = &self.channel_mults {
            c.channel_mults = v.clone();
        }
        if let Some(v) = self.res_blocks {
            c.res_blocks = v;
        }
        if let Some(v) = self.attention_stages {
            c.attention_stages = v;
        }
        if let Some(v) = self.mid_attention {
            c.mid_attention = v;
        }
        if let Some(v) = self.groups {
            c.groups = v;
        }
        c
    }
}

/// Prompt-like generation request; `roads` defaults to every slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    #[serde(rename = "type")]
    pub scenario_type: ScenarioType,
    pub half_extent_m: Option<f64>,
    #[serde(default)]
    pub junctions: usize,
    pub roads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Cycled over the requested count; empty cycles the training set's
    /// conditions, road counts and origins.
    pub conditions: Vec<ConditionSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Reference curvature change rate for every type; computed per type
    /// from the training set when absent.
    pub ccr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub hd: bool,
    pub jsd: bool,
    pub sisd: bool,
    pub plots: bool,
    /// Compare only scenarios that passed the score filter.
    pub accepted_only: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            hd: true,
            jsd: true,
            sisd: true,
            plots: true,
            accepted_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub geojson: PathBuf,
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub loss_trace: PathBuf,
    pub library: PathBuf,
    pub library_3d: PathBuf,
    pub scored: PathBuf,
    pub report: PathBuf,
    pub xodr: PathBuf,
    pub manifest: PathBuf,
}

impl Paths {
    pub fn under(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            geojson: root.join("roads.geojson"),
            dataset: root.join("dataset.jsonl"),
            checkpoints: root.join("checkpoints"),
            loss_trace: root.join("loss.csv"),
            library: root.join("library.jsonl"),
            library_3d: root.join("library3d.jsonl"),
            scored: root.join("scored.jsonl"),
            report: root.join("report"),
            xodr: root.join("xodr"),
            manifest: root.join("manifest.json"),
        }
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("final.drck")
    }
}

impl Default for Paths {
    fn default() -> Self {
        Self::under("out")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives initialization, training batches and sampling; copied into
    /// `training.seed` and `sampler.seed` on resolution.
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub sampler: SamplerConfig,
    pub generation: GenerationConfig,
    pub terrain: TerrainConfig,
    pub eval: EvalConfig,
    pub reference: ReferenceConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stages: Stage::ORDER.to_vec(),
            paths: Paths::default(),
            ingest: IngestConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            sampler: SamplerConfig::default(),
            generation: GenerationConfig::default(),
            terrain: TerrainConfig::default(),
            eval: EvalConfig::default(),
            reference: ReferenceConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn cfg_err(e: impl fmt::Display) -> AppError {
    AppError::Config(e.to_string())
}

impl FromStr for PipelineConfig {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(cfg_err)
    }
}

impl PipelineConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key.path=value` overrides, where value is a TOML literal
    /// (bare words are taken as strings).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(cfg_err)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("override {o:?} is not key=value")))?;
            let value: toml::Value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let mut slot = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = slot
                    .as_table_mut()
                    .ok_or_else(|| AppError::Config(format!("override {key}: {part} is not a table")))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                slot = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        root.try_into().map_err(cfg_err)
    }

    /// Copies the global seed into the per-module configs.
    pub fn resolved(mut self) -> Self {
        self.training.seed = self.seed;
        self.sampler.seed = self.seed;
        self
    }

    pub fn unet(&self) -> UNetConfig {
        self.model.resolve(&self.ingest.shape())
    }

    /// SHA-256 over everything that shapes the outputs; file locations,
    /// stage selection, sampler batching and network settings are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::under("");
        c.stages = Vec::new();
        c.sampler.batch = 0;
        c.ingest.cache_dir = None;
        c.ingest.offline = false;
        c.ingest.timeout_s = 0;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c).expect("config serializes"));
        format!("{:x}", h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(AppError::Config("no stages selected".into()));
        }
        let idx: Vec<usize> = self
            .stages
            .iter()
            .map(|s| Stage::ORDER.iter().position(|o| o == s).unwrap())
            .collect();
        if idx.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(AppError::Config(format!(
                "stages must be a contiguous run of {:?}, got {:?}",
                Stage::ORDER.map(Stage::name),
                self.stages.iter().map(|s| s.name()).collect::<Vec<_>>()
            )));
        }
        let shape = self.ingest.shape();
        if shape.roads == 0 || shape.points < 2 || !(shape.half_extent_m > 0.0) {
            return Err(AppError::Config("ingest needs roads >= 1, points >= 2, half_extent_m > 0".into()));
        }
        if self.ingest.source == Source::Synthetic && self.ingest.synthetic_count == 0 {
            return Err(AppError::Config("synthetic_count must be >= 1".into()));
        }
        self.unet().validate().map_err(cfg_err)?;
        self.training.validate().map_err(cfg_err)?;
        self.sampler.validate(self.training.schedule.steps).map_err(cfg_err)?;
        let stages = self.unet().stages();
        if let Some(f) = self.sampler.freeu() {
            if f.b.len() > stages {
                return Err(AppError::Config(format!(
                    "sampler.freeu has {} stage factors but the network has {stages} decoder stages",
                    f.b.len()
                )));
            }
        }
        if self.sampler.count == 0 {
            return Err(AppError::Config("sampler.count must be >= 1".into()));
        }
        for c in &self.generation.conditions {
            if c.roads.is_some_and(|r| r == 0 || r > shape.roads) {
                return Err(AppError::Config(format!("generation road count must be in 1..={}", shape.roads)));
            }
            if c.half_extent_m.is_some_and(|h| !(h > 0.0)) {
                return Err(AppError::Config("generation half_extent_m must be positive".into()));
            }
        }
        self.terrain.validate().map_err(cfg_err)?;
        self.eval.validate().map_err(cfg_err)?;
        if self.reference.ccr.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(AppError::Config("reference.ccr must be positive".into()));
        }
        Ok(())
    }
}

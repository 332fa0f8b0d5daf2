//! Stage orchestration: ingest, train, sample, terrain, evaluate, metrics,
//! export. Every artifact is stamped with the config hash and seed and
//! recorded with its SHA-256 in the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffroad_core::geo::{denormalize, ConditionVector, MetricScenario, RoadScenario, ShapePoint};
use diffroad_core::geometry::{dist, polyline_length};
use diffroad_core::metrics::{report, Histogram, DEFAULT_BINS};
use diffroad_core::sampling::{wrap, Sampler, ScenarioTemplate};
use diffroad_core::scene_eval::{score_scenario, ReferenceCcr};
use diffroad_core::schedule::NoiseSchedule;
use diffroad_core::synth::toy_dataset;
use diffroad_core::terrain::lift_scenario;
use diffroad_core::train::{Normalization, TrainExample, Trainer};
use diffroad_core::xodr::{export_opendrive, Header};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{PipelineConfig, Source, Stage};
use crate::dataset::{read_jsonl, read_scenarios, write_jsonl, Scenario3dRecord, ScenarioRecord, ScoreRecord};
use crate::error::{AppError, Result};
use crate::ingest::{build_scenario, parse_geojson, Bbox, Built, CenterSpec, OverpassClient};
use crate::report::{histogram_svg, text_table, MetricsReport};
use crate::xodr_io::{parse_opendrive, serialize};

/// Line-delimited JSON log records on stderr.
#[derive(Debug, Clone)]
pub struct Logger {
    start: Instant,
    quiet: bool,
}

impl Logger {
    pub fn new(quiet: bool) -> Self {
        Self {
            start: Instant::now(),
            quiet,
        }
    }

    pub fn log(&self, stage: Stage, step: Option<usize>, event: &str, fields: serde_json::Value) {
        if self.quiet {
            return;
        }
        let mut rec = json!({
            "t": (self.start.elapsed().as_secs_f64() * 1e3).round() / 1e3,
            "stage": stage.name(),
            "event": event,
        });
        if let Some(s) = step {
            rec["step"] = json!(s);
        }
        if let (Some(obj), serde_json::Value::Object(extra)) = (rec.as_object_mut(), fields) {
            obj.extend(extra);
        }
        let _ = writeln!(std::io::stderr().lock(), "{rec}");
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub stage: Stage,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    /// Keyed by path.
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn key(path: &Path) -> String {
    path.display().to_string()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(AppError::io(dir))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(d) => ensure_dir(d),
        None => Ok(()),
    }
}

fn metric(s: &RoadScenario) -> Result<MetricScenario> {
    Ok(denormalize(s)?)
}

pub struct Pipeline {
    cfg: PipelineConfig,
    hash: String,
    log: Logger,
    manifest: RunManifest,
}

impl Pipeline {
    /// Validates the config and the first stage's inputs.
    pub fn new(cfg: PipelineConfig, log: Logger) -> Result<Self> {
        let cfg = cfg.resolved();
        cfg.validate()?;
        let hash = cfg.hash();
        let mut manifest = RunManifest {
            config_hash: hash.clone(),
            seed: cfg.seed,
            artifacts: BTreeMap::new(),
        };
        if let Ok(text) = fs::read_to_string(&cfg.paths.manifest) {
            if let Ok(old) = serde_json::from_str::<RunManifest>(&text) {
                if old.config_hash == hash {
                    manifest = old;
                }
            }
        }
        let p = Self {
            cfg,
            hash,
            log,
            manifest,
        };
        if let Some(first) = p.cfg.stages.first() {
            for input in p.inputs(*first) {
                if !input.exists() {
                    return Err(AppError::Config(format!(
                        "stage {first} needs {}, which does not exist",
                        input.display()
                    )));
                }
            }
        }
        Ok(p)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let p = &self.cfg.paths;
        match stage {
            Stage::Ingest => match self.cfg.ingest.source {
                Source::Geojson => vec![p.geojson.clone()],
                _ => vec![],
            },
            Stage::Train => vec![p.dataset.clone()],
            Stage::Sample => {
                let mut v = vec![p.final_checkpoint()];
                if self.cfg.generation.conditions.is_empty() {
                    v.push(p.dataset.clone());
                }
                v
            }
            Stage::Terrain => vec![p.library.clone()],
            Stage::Evaluate => {
                let mut v = vec![p.library.clone()];
                if self.cfg.reference.ccr.is_none() {
                    v.push(p.dataset.clone());
                }
                v
            }
            Stage::Metrics => {
                let mut v = vec![p.dataset.clone(), p.library.clone()];
                if self.cfg.metrics.accepted_only {
                    v.push(p.scored.clone());
                }
                v
            }
            Stage::Export => vec![p.library_3d.clone(), p.scored.clone()],
        }
    }

    /// Inputs recorded by an earlier stage must still hash the same.
    fn verify_inputs(&self, stage: Stage) -> Result<()> {
        for input in self.inputs(stage) {
            if !input.exists() {
                return Err(AppError::Io {
                    path: input,
                    source: std::io::ErrorKind::NotFound.into(),
                });
            }
            if let Some(a) = self.manifest.artifacts.get(&key(&input)) {
                if sha256_file(&input)? != a.sha256 {
                    return Err(AppError::Tampered { path: input });
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, stage: Stage, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            let sha256 = sha256_file(p)?;
            self.manifest.artifacts.insert(key(p), Artifact { stage, sha256 });
        }
        let path = self.cfg.paths.manifest.clone();
        ensure_parent(&path)?;
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(AppError::io(&path))
    }

    pub fn run(&mut self) -> Result<()> {
        for stage in self.cfg.stages.clone() {
            self.run_stage(stage).map_err(|e| e.in_stage(stage.name()))?;
        }
        Ok(())
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let t0 = Instant::now();
        self.log.log(stage, None, "start", json!({}));
        self.verify_inputs(stage)?;
        let outputs = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Train => self.train()?,
            Stage::Sample => self.sample()?,
            Stage::Terrain => self.terrain()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Metrics => self.metrics()?,
            Stage::Export => self.export()?,
        };
        self.record(stage, &outputs)?;
        self.log.log(
            stage,
            None,
            "done",
            json!({ "seconds": t0.elapsed().as_secs_f64(), "artifacts": outputs.len() }),
        );
        Ok(())
    }

    fn stamp(&self, mut r: ScenarioRecord) -> ScenarioRecord {
        r.config_hash = Some(self.hash.clone());
        r
    }

    fn ingest(&self) -> Result<Vec<PathBuf>> {
        let ic = &self.cfg.ingest;
        let shape = ic.shape();
        let records: Vec<ScenarioRecord> = match ic.source {
            Source::Synthetic => toy_dataset(ic.synthetic_count, self.cfg.seed, shape.roads, shape.points, shape.half_extent_m)?
                .iter()
                .enumerate()
                .map(|(i, s)| self.stamp(ScenarioRecord::from_scenario(format!("toy-{i:04}"), s)))
                .collect(),
            Source::Geojson | Source::Overpass => {
                let mut jobs: Vec<(CenterSpec, Vec<diffroad_core::geo::RawRoad>)> = Vec::new();
                if ic.source == Source::Geojson {
                    let path = &self.cfg.paths.geojson;
                    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
                    let input = parse_geojson(&text)?;
                    let centers = input.centers.iter().chain(&ic.centers);
                    jobs.extend(centers.map(|c| (c.clone(), input.roads.clone())));
                } else {
                    let client = OverpassClient {
                        endpoint: ic.endpoint.clone(),
                        cache_dir: ic.cache_dir.clone(),
                        offline: ic.offline,
                        timeout: std::time::Duration::from_secs(ic.timeout_s),
                    };
                    for c in &ic.centers {
                        let bbox = Bbox::around(c.point()?, shape.half_extent_m);
                        let roads = client.fetch_osm_roads(&bbox, &ic.classes)?;
                        self.log.log(Stage::Ingest, None, "fetched", json!({ "center": c.id, "roads": roads.len() }));
                        jobs.push((c.clone(), roads));
                    }
                }
                let built: Vec<(String, Built)> = jobs
                    .par_iter()
                    .map(|(c, roads)| {
                        if roads.is_empty() {
                            return Ok((c.id.clone(), Built::Empty));
                        }
                        Ok((c.id.clone(), build_scenario(roads, c, &shape)?))
                    })
                    .collect::<Result<_>>()?;
                let mut out = Vec::new();
                for (id, b) in built {
                    match b {
                        Built::Scenario(s) => out.push(self.stamp(ScenarioRecord::from_scenario(id, &s))),
                        Built::Empty => self.log.log(Stage::Ingest, None, "skip", json!({ "center": id, "reason": "no roads in window" })),
                    }
                }
                out
            }
        };
        if records.is_empty() {
            return Err(AppError::Config("ingest produced no scenarios".into()));
        }
        let path = self.cfg.paths.dataset.clone();
        write_jsonl(&path, &records)?;
        self.log.log(Stage::Ingest, None, "dataset", json!({ "scenarios": records.len(), "path": key(&path) }));
        Ok(vec![path])
    }

    fn train(&self) -> Result<Vec<PathBuf>> {
        let data = read_scenarios(&self.cfg.paths.dataset)?;
        let examples: Vec<TrainExample> = data.iter().map(|(_, s)| TrainExample::from_scenario(s)).collect();
        let first = &data[0].1;
        if data.iter().any(|(_, s)| s.half_extent_m != first.half_extent_m || s.n != first.n || s.k != first.k) {
            return Err(AppError::Config("dataset mixes scenario shapes or extents".into()));
        }
        let norm = Normalization {
            roads: first.n,
            points: first.k,
            half_extent_m: first.half_extent_m,
        };
        let unet = self.cfg.model.resolve(&crate::ingest::ScenarioShape {
            roads: norm.roads,
            points: norm.points,
            half_extent_m: norm.half_extent_m,
        });
        let mut trainer = Trainer::new(unet, self.cfg.training.clone(), &examples, norm)?;
        let dir = self.cfg.paths.checkpoints.clone();
        ensure_dir(&dir)?;
        let trace_path = self.cfg.paths.loss_trace.clone();
        ensure_parent(&trace_path)?;
        let mut trace = csv::Writer::from_path(&trace_path).map_err(|e| AppError::Io {
            path: trace_path.clone(),
            source: e.into(),
        })?;
        let csv_err = |e: csv::Error| AppError::Io {
            path: trace_path.clone(),
            source: e.into(),
        };
        trace.write_record(["step", "L_mse", "L_s", "L"]).map_err(csv_err)?;
        let mut outputs = Vec::new();
        let every_log = (self.cfg.training.max_steps / 20).max(1);
        let interval = self.cfg.training.checkpoint_interval;
        while !trainer.is_done() {
            let rec = trainer.step()?;
            trace
                .write_record([
                    rec.step.to_string(),
                    format!("{:e}", rec.loss.mse),
                    format!("{:e}", rec.loss.smooth),
                    format!("{:e}", rec.loss.total),
                ])
                .map_err(csv_err)?;
            if rec.step % every_log == 0 || rec.step == 1 {
                self.log.log(
                    Stage::Train,
                    Some(rec.step),
                    "loss",
                    json!({ "L_mse": rec.loss.mse, "L_s": rec.loss.smooth, "L": rec.loss.total, "grad_norm": rec.grad_norm }),
                );
            }
            if interval > 0 && rec.step % interval == 0 && !trainer.is_done() {
                let p = dir.join(format!("step_{:06}.drck", rec.step));
                self.save_checkpoint(&trainer, &p)?;
                outputs.push(p);
            }
        }
        trace.flush().map_err(AppError::io(&trace_path))?;
        let fin = self.cfg.paths.final_checkpoint();
        self.save_checkpoint(&trainer, &fin)?;
        outputs.push(fin);
        outputs.push(trace_path);
        Ok(outputs)
    }

    fn save_checkpoint(&self, trainer: &Trainer, path: &Path) -> Result<()> {
        let stamp = BTreeMap::from([
            ("config_hash".to_string(), self.hash.clone()),
            ("seed".to_string(), self.cfg.seed.to_string()),
        ]);
        checkpoint::save(
            &Checkpoint {
                state: trainer.state(),
                stamp,
            },
            path,
        )?;
        self.log.log(Stage::Train, Some(trainer.step_count()), "checkpoint", json!({ "path": key(path) }));
        Ok(())
    }

    fn sample(&self) -> Result<Vec<PathBuf>> {
        let ck = checkpoint::load(&self.cfg.paths.final_checkpoint())?;
        let net = ck.state.network()?;
        let schedule = NoiseSchedule::from_params(ck.state.schedule)?;
        let norm = ck.state.normalization;
        let sc = &self.cfg.sampler;
        // (condition, valid roads, origin, half extent) per scenario
        let plan: Vec<(ConditionVector, usize, ShapePoint, f64)> = if self.cfg.generation.conditions.is_empty() {
            let data = read_scenarios(&self.cfg.paths.dataset)?;
            (0..sc.count)
                .map(|i| {
                    let s = &data[i % data.len()].1;
                    (s.condition, s.valid_roads(), s.origin, s.half_extent_m)
                })
                .collect()
        } else {
            let specs = &self.cfg.generation.conditions;
            (0..sc.count)
                .map(|i| {
                    let c = &specs[i % specs.len()];
                    let h = c.half_extent_m.unwrap_or(norm.half_extent_m);
                    let roads = c.roads.unwrap_or(norm.roads);
                    (ConditionVector::new(c.scenario_type, h, c.junctions), roads, ShapePoint { lat: 0.0, lng: 0.0 }, h)
                })
                .collect()
        };
        let t0 = Instant::now();
        let chunks: Vec<Vec<usize>> = (0..sc.count).collect::<Vec<_>>().chunks(sc.batch).map(<[usize]>::to_vec).collect();
        let sampler = Sampler::new(&net, &schedule);
        let generated: Vec<Vec<RoadScenario>> = chunks
            .par_iter()
            .map(|idx| {
                let conds: Vec<ConditionVector> = idx.iter().map(|&i| plan[i].0).collect();
                let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
                let data = sampler.sample_strided(&conds, &ids, sc.seed, sc.stride, sc.freeu())?;
                idx.iter()
                    .zip(data)
                    .map(|(&i, d)| {
                        let (cond, roads, origin, h) = plan[i];
                        let tmpl = ScenarioTemplate {
                            roads: norm.roads,
                            points: norm.points,
                            half_extent_m: h,
                            origin,
                        };
                        let mut s = wrap(&d, cond, Some(roads), &tmpl)?;
                        for r in roads..s.n {
                            for p in 0..s.k * 2 {
                                s.points[r * s.k * 2 + p] = 0.0;
                            }
                        }
                        Ok(s)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let secs = t0.elapsed().as_secs_f64();
        let records: Vec<ScenarioRecord> = generated
            .into_iter()
            .flatten()
            .enumerate()
            .map(|(i, s)| {
                let mut r = self.stamp(ScenarioRecord::from_scenario(format!("gen-{i:05}"), &s));
                r.seed = Some(sc.seed);
                r
            })
            .collect();
        let path = self.cfg.paths.library.clone();
        write_jsonl(&path, &records)?;
        self.log.log(
            Stage::Sample,
            None,
            "library",
            json!({ "scenarios": records.len(), "seconds": secs, "per_scenario_s": secs / records.len() as f64 }),
        );
        Ok(vec![path])
    }

    fn terrain(&self) -> Result<Vec<PathBuf>> {
        let lib = read_scenarios(&self.cfg.paths.library)?;
        let lifted: Vec<Option<Scenario3dRecord>> = lib
            .par_iter()
            .map(|(r, s)| {
                let m = metric(s)?;
                match lift_scenario(&m, &self.cfg.terrain) {
                    Ok(l) => Ok(Some(Scenario3dRecord {
                        id: r.id.clone(),
                        scenario_type: l.scenario.scenario_type,
                        origin: l.scenario.origin,
                        roads: l.scenario.roads.into_iter().map(|rd| rd.points).collect(),
                        dropped_roads: l.dropped_roads,
                        seed: r.seed,
                        config_hash: Some(self.hash.clone()),
                    })),
                    Err(diffroad_core::Error::Degenerate(_)) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            })
            .collect::<Result<_>>()?;
        let skipped = lifted.iter().filter(|l| l.is_none()).count();
        if skipped > 0 {
            self.log.log(Stage::Terrain, None, "skip", json!({ "degenerate_scenarios": skipped }));
        }
        let records: Vec<Scenario3dRecord> = lifted.into_iter().flatten().collect();
        let path = self.cfg.paths.library_3d.clone();
        write_jsonl(&path, &records)?;
        Ok(vec![path])
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>> {
        let lib = read_scenarios(&self.cfg.paths.library)?;
        let refs = match self.cfg.reference.ccr {
            Some(c) => ReferenceCcr {
                per_type: [Some(c); 4],
                pooled: Some(c),
            },
            None => {
                let real = read_scenarios(&self.cfg.paths.dataset)?
                    .iter()
                    .map(|(_, s)| metric(s))
                    .collect::<Result<Vec<_>>>()?;
                ReferenceCcr::from_scenarios(&real)
            }
        };
        let ec = &self.cfg.eval;
        let scored: Vec<ScenarioRecord> = lib
            .par_iter()
            .map(|(r, s)| {
                let score = score_scenario(&metric(s)?, &refs, ec)?;
                let mut r = r.clone();
                r.score = Some(ScoreRecord::new(&score, ec.s_min));
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let accepted = scored.iter().filter(|r| r.score.is_some_and(|s| s.accepted)).count();
        let mean_s = scored.iter().filter_map(|r| r.score.map(|s| s.s)).sum::<f64>() / scored.len().max(1) as f64;
        let path = self.cfg.paths.scored.clone();
        write_jsonl(&path, &scored)?;
        let summary = self.cfg.paths.report.join("scores.json");
        ensure_dir(&self.cfg.paths.report)?;
        let body = json!({
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "reference_ccr": refs,
            "scenarios": scored.len(),
            "accepted": accepted,
            "mean_score": mean_s,
            "s_min": ec.s_min,
            "lambda": ec.lambda,
        });
        fs::write(&summary, serde_json::to_string_pretty(&body).expect("json") + "\n").map_err(AppError::io(&summary))?;
        self.log.log(Stage::Evaluate, None, "scores", json!({ "accepted": accepted, "of": scored.len(), "mean_score": mean_s }));
        Ok(vec![path, summary])
    }

    fn metrics(&self) -> Result<Vec<PathBuf>> {
        let real = read_scenarios(&self.cfg.paths.dataset)?
            .iter()
            .map(|(_, s)| metric(s))
            .collect::<Result<Vec<_>>>()?;
        let gen_src = if self.cfg.metrics.accepted_only {
            read_scenarios(&self.cfg.paths.scored)?
                .into_iter()
                .filter(|(r, _)| r.score.is_some_and(|s| s.accepted))
                .collect()
        } else {
            read_scenarios(&self.cfg.paths.library)?
        };
        let gen = gen_src.iter().map(|(_, s)| metric(s)).collect::<Result<Vec<_>>>()?;
        if gen.is_empty() {
            return Err(AppError::Config("no generated scenarios to compare".into()));
        }
        let rows = report(&real, &gen)?;
        let dir = self.cfg.paths.report.clone();
        ensure_dir(&dir)?;
        let txt = dir.join("metrics.txt");
        let table = text_table(&rows, &self.cfg.metrics);
        fs::write(&txt, &table).map_err(AppError::io(&txt))?;
        let js = dir.join("metrics.json");
        let body = MetricsReport {
            config_hash: &self.hash,
            seed: self.cfg.seed,
            rows: &rows,
        };
        fs::write(&js, serde_json::to_string_pretty(&body).expect("json") + "\n").map_err(AppError::io(&js))?;
        let mut outputs = vec![txt, js];
        if self.cfg.metrics.plots {
            let roads = |set: &[MetricScenario]| -> Vec<Vec<[f64; 2]>> { set.iter().flat_map(|s| s.roads.clone()).collect() };
            let (rr, gr) = (roads(&real), roads(&gen));
            let lengths = |r: &[Vec<[f64; 2]>]| r.iter().map(|p| polyline_length(p)).collect::<Vec<_>>();
            let gaps = |r: &[Vec<[f64; 2]>]| r.iter().flat_map(|p| p.windows(2).map(|w| dist(w[0], w[1]))).collect::<Vec<_>>();
            for (name, title, a, b) in [
                ("road_length.svg", "Road length (m)", lengths(&rr), lengths(&gr)),
                ("cpd.svg", "Consecutive point distance (m)", gaps(&rr), gaps(&gr)),
            ] {
                let (ha, hb): (Histogram, Histogram) = Histogram::shared(&a, &b, DEFAULT_BINS)?;
                let p = dir.join(name);
                fs::write(&p, histogram_svg(title, &ha, &hb)).map_err(AppError::io(&p))?;
                outputs.push(p);
            }
        }
        for line in table.lines() {
            self.log.log(Stage::Metrics, None, "row", json!({ "text": line }));
        }
        Ok(outputs)
    }

    fn export(&self) -> Result<Vec<PathBuf>> {
        let lib3d: Vec<Scenario3dRecord> = read_jsonl(&self.cfg.paths.library_3d)?;
        let scored: Vec<ScenarioRecord> = read_jsonl(&self.cfg.paths.scored)?;
        let accepted: BTreeSet<&str> = scored
            .iter()
            .filter(|r| r.score.is_some_and(|s| s.accepted))
            .map(|r| r.id.as_str())
            .collect();
        let dir = self.cfg.paths.xodr.clone();
        ensure_dir(&dir)?;
        let written: Vec<(PathBuf, usize)> = lib3d
            .par_iter()
            .filter(|r| accepted.contains(r.id.as_str()))
            .map(|r| {
                let mut header = Header::new(r.id.clone());
                header.geo_reference = Some(format!(
                    "+proj=eqc +lat_ts={lat} +lat_0={lat} +lon_0={lng} +R=6371000 +units=m +no_defs",
                    lat = r.origin.lat,
                    lng = r.origin.lng
                ));
                header.user_data = vec![
                    ("config_hash".into(), self.hash.clone()),
                    ("seed".into(), r.seed.unwrap_or(self.cfg.seed).to_string()),
                    ("scenario".into(), r.id.clone()),
                ];
                let ex = export_opendrive(&r.to_scenario(), header)?;
                let text = serialize(&ex.document)?;
                parse_opendrive(&text)?;
                let p = dir.join(format!("{}_{}.xodr", r.id, r.scenario_type.name()));
                fs::write(&p, text).map_err(AppError::io(&p))?;
                Ok((p, ex.skipped_segments))
            })
            .collect::<Result<_>>()?;
        let skipped: usize = written.iter().map(|w| w.1).sum();
        if skipped > 0 {
            self.log.log(Stage::Export, None, "warning", json!({ "zero_length_segments_skipped": skipped }));
        }
        self.log.log(Stage::Export, None, "files", json!({ "written": written.len(), "accepted": accepted.len() }));
        Ok(written.into_iter().map(|w| w.0).collect())
    }
}

/// Validates, then runs the selected stages in order.
pub fn run_pipeline(cfg: PipelineConfig, log: Logger) -> Result<RunManifest> {
    let mut p = Pipeline::new(cfg, log)?;
    p.run()?;
    Ok(p.manifest)
}

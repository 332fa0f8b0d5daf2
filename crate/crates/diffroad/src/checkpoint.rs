//! `DRCK` checkpoint container.
//!
//! Layout: magic `DRCK`, format version (u16 LE), manifest length (u32 LE),
//! a JSON manifest, then raw little-endian f32 tensor data. Manifest offsets
//! are relative to the start of the data section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use diffroad_core::nn::{ParamStore, UNetConfig};
use diffroad_core::schedule::ScheduleParams;
use diffroad_core::train::{Normalization, Optimizer, OptimizerKind, TrainState, TrainingConfig};
use diffroad_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 4] = b"DRCK";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a DRCK v{VERSION} checkpoint: {0}")]
    Version(String),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint manifest unreadable: {0}")]
    Manifest(String),
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: [usize; 3],
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerMeta {
    kind: OptimizerKind,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Tensor names in storage order (`param/`, `adam_m/`, `adam_v/` prefixes).
    order: Vec<String>,
    tensors: BTreeMap<String, TensorEntry>,
    data_len: u64,
    unet: UNetConfig,
    schedule: ScheduleParams,
    training: TrainingConfig,
    normalization: Normalization,
    step: usize,
    optimizer: OptimizerMeta,
    /// Provenance stamps such as the config hash and seed.
    pub stamp: BTreeMap<String, String>,
}

/// A training state plus the stamps it was written with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub stamp: BTreeMap<String, String>,
}

fn groups(state: &TrainState) -> [(&'static str, &ParamStore<f32>); 3] {
    [
        ("param", &state.params),
        ("adam_m", &state.optimizer.m),
        ("adam_v", &state.optimizer.v),
    ]
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let state = &ck.state;
    let mut order = Vec::new();
    let mut tensors = BTreeMap::new();
    let mut data: Vec<u8> = Vec::new();
    for (prefix, store) in groups(state) {
        for (name, t) in store.iter() {
            let key = format!("{prefix}/{name}");
            tensors.insert(
                key.clone(),
                TensorEntry {
                    shape: t.dims(),
                    dtype: "f32".into(),
                    offset: data.len() as u64,
                },
            );
            order.push(key);
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = Manifest {
        order,
        tensors,
        data_len: data.len() as u64,
        unet: state.unet.clone(),
        schedule: state.schedule,
        training: state.training.clone(),
        normalization: state.normalization,
        step: state.step,
        optimizer: OptimizerMeta {
            kind: state.optimizer.kind,
            step: state.optimizer.step,
        },
        stamp: ck.stamp.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::Version("bad magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated(format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CheckpointError::Version(format!("format version {version}")));
    }
    let mlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() < mlen {
        return Err(CheckpointError::Truncated(format!("manifest needs {mlen} bytes, {} remain", body.len())));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..mlen]).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let data = &body[mlen..];
    if (data.len() as u64) < manifest.data_len {
        return Err(CheckpointError::Truncated(format!(
            "data section holds {} of {} bytes",
            data.len(),
            manifest.data_len
        )));
    }
    if data.len() as u64 != manifest.data_len {
        return Err(CheckpointError::Integrity(format!(
            "{} trailing bytes after the data section",
            data.len() as u64 - manifest.data_len
        )));
    }
    if manifest.order.len() != manifest.tensors.len() {
        return Err(CheckpointError::Integrity("tensor order does not match the tensor table".into()));
    }

    let mut stores = [ParamStore::<f32>::new(), ParamStore::new(), ParamStore::new()];
    let mut expected_offset = 0u64;
    for key in &manifest.order {
        let entry = manifest
            .tensors
            .get(key)
            .ok_or_else(|| CheckpointError::Integrity(format!("tensor {key} listed but not described")))?;
        if entry.dtype != "f32" {
            return Err(CheckpointError::Manifest(format!("tensor {key} has dtype {}", entry.dtype)));
        }
        let numel: usize = entry.shape.iter().product();
        let size = numel as u64 * 4;
        let end = entry.offset.checked_add(size).unwrap_or(u64::MAX);
        if end > manifest.data_len {
            return Err(CheckpointError::Integrity(format!(
                "tensor {key} spans bytes {}..{end} past the {}-byte data section",
                entry.offset, manifest.data_len
            )));
        }
        if entry.offset != expected_offset {
            return Err(CheckpointError::Integrity(format!(
                "tensor {key} starts at {} but the previous tensor ends at {expected_offset}",
                entry.offset
            )));
        }
        expected_offset = end;
        let raw = &data[entry.offset as usize..end as usize];
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let [a, b, c] = entry.shape;
        let (prefix, name) = key
            .split_once('/')
            .ok_or_else(|| CheckpointError::Manifest(format!("tensor name {key} lacks a group prefix")))?;
        let slot = match prefix {
            "param" => 0,
            "adam_m" => 1,
            "adam_v" => 2,
            _ => return Err(CheckpointError::Manifest(format!("unknown tensor group {prefix}"))),
        };
        stores[slot].push(name, Tensor::from_vec(a, b, c, values));
    }
    if expected_offset != manifest.data_len {
        return Err(CheckpointError::Integrity("tensors do not cover the data section".into()));
    }
    let [params, m, v] = stores;
    if manifest.optimizer.kind == OptimizerKind::Adam && (m.len() != params.len() || v.len() != params.len()) {
        return Err(CheckpointError::Integrity("Adam moments do not match the parameters".into()));
    }
    Ok(Checkpoint {
        state: TrainState {
            unet: manifest.unet,
            params,
            optimizer: Optimizer {
                kind: manifest.optimizer.kind,
                step: manifest.optimizer.step,
                m,
                v,
            },
            schedule: manifest.schedule,
            step: manifest.step,
            training: manifest.training,
            normalization: manifest.normalization,
        },
        stamp: manifest.stamp,
    })
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("drck.tmp");
    fs::write(&tmp, encode(ck)).map_err(AppError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(AppError::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    let ck = decode(&bytes)?;
    // Architecture and shapes must agree with the descriptor.
    ck.state.network().map_err(|e| CheckpointError::Integrity(e.to_string()))?;
    Ok(ck)
}

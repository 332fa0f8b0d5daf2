use std::collections::BTreeMap;

use diffroad::checkpoint::{self, decode, encode, Checkpoint, CheckpointError};
use diffroad::AppError;
use diffroad_core::nn::UNetConfig;
use diffroad_core::synth::toy_dataset;
use diffroad_core::train::{Normalization, TrainExample, Trainer, TrainingConfig};
use serde_json::Value;

fn examples() -> Vec<TrainExample> {
    toy_dataset(4, 2, 4, 16, 200.0).unwrap().iter().map(TrainExample::from_scenario).collect()
}

fn config() -> TrainingConfig {
    TrainingConfig {
        batch_size: 4,
        max_steps: 6,
        seed: 11,
        ..Default::default()
    }
}

fn trained(data: &[TrainExample], steps: usize) -> Trainer<'_> {
    let norm = Normalization {
        roads: 4,
        points: 16,
        half_extent_m: 200.0,
    };
    let mut t = Trainer::new(UNetConfig::reduced(4, 16), config(), data, norm).unwrap();
    for _ in 0..steps {
        t.step().unwrap();
    }
    t
}

fn sample_checkpoint(data: &[TrainExample]) -> Checkpoint {
    Checkpoint {
        state: trained(data, 3).state(),
        stamp: BTreeMap::from([("seed".into(), "11".into())]),
    }
}

/// Splits an encoded checkpoint into its manifest JSON and data section.
fn split(bytes: &[u8]) -> (Value, Vec<u8>) {
    let mlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let manifest = serde_json::from_slice(&bytes[10..10 + mlen]).unwrap();
    (manifest, bytes[10 + mlen..].to_vec())
}

fn join(manifest: &Value, data: &[u8]) -> Vec<u8> {
    let json = serde_json::to_vec(manifest).unwrap();
    let mut out = b"DRCK".to_vec();
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(data);
    out
}

#[test]
fn round_trip_is_bit_exact() {
    let data = examples();
    let ck = sample_checkpoint(&data);
    let bytes = encode(&ck);
    let back = decode(&bytes).unwrap();
    assert_eq!(back, ck);
    for ((_, a), (_, b)) in ck.state.params.iter().zip(back.state.params.iter()) {
        let bits = |t: &diffroad_core::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(encode(&back), bytes);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = examples();
    let straight = trained(&data, 6).state();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.drck");
    checkpoint::save(
        &Checkpoint {
            state: trained(&data, 3).state(),
            stamp: BTreeMap::new(),
        },
        &path,
    )
    .unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let mut resumed = Trainer::resume(loaded.state, config(), &data).unwrap();
    while !resumed.is_done() {
        resumed.step().unwrap();
    }
    assert_eq!(resumed.state(), straight);
}

#[test]
fn corrupted_magic_is_a_version_error() {
    let data = examples();
    let mut bytes = encode(&sample_checkpoint(&data));
    bytes[0] = b'X';
    assert!(matches!(decode(&bytes), Err(CheckpointError::Version(_))));
    let mut bytes = encode(&sample_checkpoint(&data));
    bytes[4] = 9;
    assert!(matches!(decode(&bytes), Err(CheckpointError::Version(_))));
}

#[test]
fn truncation_is_detected() {
    let data = examples();
    let bytes = encode(&sample_checkpoint(&data));
    for cut in [6, 40, bytes.len() - 1] {
        assert!(matches!(decode(&bytes[..cut]), Err(CheckpointError::Truncated(_))), "cut {cut}");
    }
}

#[test]
fn offset_past_the_data_is_an_integrity_error() {
    let data = examples();
    let (mut manifest, payload) = split(&encode(&sample_checkpoint(&data)));
    let len = manifest["data_len"].as_u64().unwrap();
    let first = manifest["order"][0].as_str().unwrap().to_string();
    manifest["tensors"][&first]["offset"] = Value::from(len);
    assert!(matches!(decode(&join(&manifest, &payload)), Err(CheckpointError::Integrity(_))));
}

#[test]
fn trailing_bytes_and_bad_manifests() {
    let data = examples();
    let mut bytes = encode(&sample_checkpoint(&data));
    bytes.extend_from_slice(&[0, 0, 0, 0]);
    assert!(matches!(decode(&bytes), Err(CheckpointError::Integrity(_))));

    let (mut manifest, payload) = split(&encode(&sample_checkpoint(&data)));
    manifest["surprise"] = Value::from(1);
    assert!(matches!(decode(&join(&manifest, &payload)), Err(CheckpointError::Manifest(_))));

    let (mut manifest, payload) = split(&encode(&sample_checkpoint(&data)));
    let first = manifest["order"][0].as_str().unwrap().to_string();
    manifest["tensors"][&first]["dtype"] = Value::from("f16");
    assert!(matches!(decode(&join(&manifest, &payload)), Err(CheckpointError::Manifest(_))));
}

#[test]
fn load_rejects_shape_mismatch() {
    let data = examples();
    let (mut manifest, payload) = split(&encode(&sample_checkpoint(&data)));
    manifest["unet"]["base_channels"] = Value::from(manifest["unet"]["base_channels"].as_u64().unwrap() * 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.drck");
    std::fs::write(&path, join(&manifest, &payload)).unwrap();
    assert!(matches!(
        checkpoint::load(&path),
        Err(AppError::Checkpoint(CheckpointError::Integrity(_)))
    ));
}

use std::path::Path;
use std::process::{Command, Output};

use diffroad::config::PipelineConfig;

const BIN: &str = env!("CARGO_BIN_EXE_diffroad");

fn toy() -> String {
    format!("{}/../../configs/toy.toml", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("DIFFROAD_CACHE").output().unwrap()
}

fn quick_args<'a>(out: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "-q",
        "--out",
        out,
        "--set",
        "training.max_steps=5",
        "--set",
        "sampler.count=3",
        "--set",
        "sampler.stride=50",
    ];
    v.extend_from_slice(rest);
    v
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn print_config_reflects_flags() {
    let o = run(&["--config", &toy(), "--seed", "42", "--print-config", "train", "--steps", "77"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cfg: PipelineConfig = String::from_utf8(o.stdout).unwrap().parse().unwrap();
    assert_eq!(cfg.training.max_steps, 77);
    assert_eq!((cfg.seed, cfg.training.seed, cfg.sampler.seed), (42, 42, 42));
    assert_eq!(cfg.stages.len(), 1);
}

#[test]
fn config_problems_exit_with_two() {
    let o = run(&["--config", "/nonexistent/diffroad.toml", "pipeline"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: "));
    let o = run(&["--set", "training.batch_size=0", "--print-config", "pipeline"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["--set", "bogus", "pipeline"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "sample"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn stage_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let geo = dir.path().join("broken.geojson");
    std::fs::write(&geo, "{\"type\": \"Feature\"}").unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["-q", "--out", out, "ingest", "--geojson", geo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("stage `ingest` failed"));
}

#[test]
fn subcommands_chain_through_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = toy();
    for stage in ["ingest", "train", "sample", "terrain", "evaluate", "metrics", "export"] {
        let mut args = quick_args(out, &["--config", &cfg]);
        args.push(stage);
        if stage == "evaluate" {
            args.extend(["--s-min", "0"]);
        }
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
    let root = Path::new(out);
    assert!(root.join("report/metrics.txt").exists());
    assert_eq!(std::fs::read_dir(root.join("xodr")).unwrap().count(), 3);
}

#[test]
fn logs_are_json_lines_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = toy();
    let mut args = quick_args(out, &["--config", &cfg, "-j", "1"]);
    args.retain(|a| *a != "-q");
    args.push("ingest");
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let err = stderr(&o);
    let records: Vec<serde_json::Value> = err
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(records.iter().any(|r| r["event"] == "dataset" && r["scenarios"] == 8));
    assert!(records.iter().all(|r| r["stage"] == "ingest" && r["t"].is_number()));
    assert!(err.contains("# effective config"));
    assert!(o.stdout.is_empty());
}

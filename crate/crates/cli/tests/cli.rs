use std::path::Path;
use std::process::{Command, Output};

fn tracelab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracelab"))
        .args(args)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("run tracelab")
}

#[test]
fn config_prints_effective_toml() {
    let dir = tempfile::tempdir().unwrap();
    let out = tracelab(dir.path(), &["config", "--seed", "41"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 41"), "{text}");
    let back = tracelab_cli::ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(back.seed, 41);
}

#[test]
fn bad_config_reports_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "corpus.studnets = 3\n").unwrap();
    let out = tracelab(dir.path(), &["config", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("bad.toml"), "{err}");
    assert!(err["causes"].as_array().is_some_and(|c| !c.is_empty()), "{err}");
}

#[test]
fn missing_checkpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, "corpus.students = 80\ncorpus.titles = 55\ncorpus.min_traces = 4\ncorpus.max_traces = 6\n").unwrap();
    let out = tracelab(dir.path(), &["sample", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("trace"), "{err}");
}

#[test]
fn splits_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, "corpus.students = 80\ncorpus.titles = 55\ncorpus.min_traces = 4\ncorpus.max_traces = 6\n").unwrap();
    let out = tracelab(dir.path(), &["splits", "--config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let counts: serde_json::Value = serde_json::from_slice(out.stdout.trim_ascii()).unwrap();
    assert!(counts["train"].as_u64().unwrap() > 0, "{counts}");
    assert!(dir.path().join("out/splits.csv").exists());
}

//! The `dpa` binary: exit codes, overrides and a full mock run.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpa")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let out = dpa(&["synth", "--out", dir.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.json")
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {text}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn help_lists_every_stage() {
    let out = dpa(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for stage in dpa_cli::stages::STAGES {
        assert!(text.contains(stage), "{stage} missing from help");
    }
}

#[test]
fn usage_errors_exit_two() {
    let out = dpa(&["no-such-stage"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn config_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dpa(&["retrieve"]).status.code(), Some(3));
    let cfg = synth(dir.path());
    let c = cfg.to_str().unwrap();
    let out = dpa(&["retrieve", "--config", c, "--set", "retrieve.depth=0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("retrieve.depth"));
    assert_eq!(dpa(&["retrieve", "--config", c, "--set", "shared.bogus=1"]).status.code(), Some(3));
}

#[test]
fn missing_upstream_exits_four_and_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let out = dpa(&["rerank", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let err = error_json(&out);
    assert_eq!(err["stage"], "rerank");
    assert!(err["message"].as_str().unwrap().contains("train-reranker"));
}

#[test]
fn malformed_input_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    assert!(dpa(&["build-store", "--config", cfg.to_str().unwrap()]).status.success());
    std::fs::write(dir.path().join("train.jsonl"), "{not json\n").unwrap();
    let out = dpa(&["retrieve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn set_redirects_the_work_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let c = cfg.to_str().unwrap();
    assert!(dpa(&["build-store", "--config", c]).status.success());
    assert!(dir.path().join("store.dpae").exists());
    let out = dpa(&["retrieve", "--config", c, "--set", "shared.work_dir=elsewhere"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("elsewhere/train.retrieved.jsonl").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn mock_run_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let audit = dir.path().join("audit.jsonl");
    let out = dpa(&["run-all", "--config", cfg.to_str().unwrap(), "--audit", audit.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let work = dir.path().join("out");
    for name in [
        "train.retrieved.jsonl",
        "pref.jsonl",
        "augmented.jsonl",
        "augmented.filtered.jsonl",
        "reranker.dpae",
        "reranked.test.jsonl",
        "prealign.jsonl",
        "sft.jsonl",
        "predictions.jsonl",
        "metrics.json",
        "report.txt",
    ] {
        assert!(work.join(name).exists(), "{name} missing");
    }
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(work.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["hit_at_1"].as_f64().unwrap() > metrics["retriever"]["hit_at_1"].as_f64().unwrap());
    assert!(std::fs::read_to_string(&audit).unwrap().lines().count() > 100);
}

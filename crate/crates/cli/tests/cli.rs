//! End-to-end runs of the `ewrls` binary: outputs, manifests and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn ewrls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ewrls")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_series_and_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = ewrls(&["synth", "--n", "300", "--seed", "4", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 301);
    assert_eq!(text.lines().next(), Some("value"));
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let manifest = read_json(&dir.path().join("a.manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert!(manifest["timestamp"].as_str().is_some());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("x.csv");
    assert_eq!(code(&ewrls(&["synth", "--n", "0", "--out", out_path.to_str().unwrap()])), 1);
    assert_eq!(code(&ewrls(&["frobnicate"])), 1);
    assert_eq!(code(&ewrls(&["verify", "--rank-tolerance", "-1"])), 1);
}

#[test]
fn missing_column_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    assert_eq!(code(&ewrls(&["synth", "--n", "400", "--out", csv.to_str().unwrap()])), 0);
    let out = ewrls(&["run", "--csv", csv.to_str().unwrap(), "--column", "nope", "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn quick_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ewrls(&["verify", "--quick", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(!stdout(&out).contains("FAIL"));
    assert!(dir.path().join("verify.csv").exists());
    assert_eq!(read_json(&dir.path().join("manifest.json"))["command"], "verify");
}

#[test]
fn loose_rank_tolerance_is_caught_by_verify() {
    let out = ewrls(&["verify", "--quick", "--rank-tolerance", "1"]);
    assert_eq!(code(&out), 3);
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.starts_with("FAIL ")), "{text}");
}

#[test]
fn small_sweep_writes_rows_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = ewrls(&["sweep", "--dims", "8,32", "--steps", "200", "--oracle", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "sweep");
    assert_eq!(manifest["config"]["steps"], 200);
    assert_eq!(manifest["seeds"].as_object().unwrap().len(), 3);
}

#[test]
fn config_file_overrides_flags_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"steps": 100, "dims": [16]}"#).unwrap();
    let out_dir = dir.path().join("sweep");
    let out = ewrls(&["sweep", "--steps", "5000", "--config", good.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["config"]["steps"], 100);
    assert_eq!(manifest["config"]["dims"], serde_json::json!([16]));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"stepz": 100}"#).unwrap();
    let out = ewrls(&["sweep", "--config", bad.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn walk_forward_run_writes_folds_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    assert_eq!(code(&ewrls(&["synth", "--n", "6000", "--out", csv.to_str().unwrap()])), 0);
    let out_dir = dir.path().join("run");
    let out = ewrls(&[
        "run", "--csv", csv.to_str().unwrap(), "--column", "value", "--model", "qrd_rls", "--window", "272", "--val-len", "200",
        "--test-len", "200", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let folds = std::fs::read_to_string(out_dir.join("folds.csv")).unwrap();
    let kinds: Vec<&str> = folds.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "validation").count(), 8);
    assert_eq!(kinds.iter().filter(|k| **k == "test").count(), 5);
    assert_eq!(kinds.last(), Some(&"test_mean"));
    assert!(out_dir.join("grid.csv").exists());
    assert_eq!(read_json(&out_dir.join("manifest.json"))["command"], "run");
}

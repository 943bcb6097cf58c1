//! End-to-end tests of the `fwm` binary at smoke scale.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fwm_bin() -> PathBuf {
    let mut p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.pop();
    p.pop();
    p.push("target");
    p.push(if cfg!(debug_assertions) { "debug" } else { "release" });
    p.push("fwm");
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(fwm_bin()).args(args).output().expect("spawn fwm")
}

fn manifest_hashes(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn gen_data_is_reproducible_via_manifest_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a.fwmd");
    let out2 = dir.path().join("b.fwmd");
    for out in [&out1, &out2] {
        let output = run(&[
            "gen-data",
            "--task",
            "stack3",
            "--transitions",
            "30",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    }
    let m1 = manifest_hashes(&dir.path().join("a.fwmd.manifest.json"));
    let m2 = manifest_hashes(&dir.path().join("b.fwmd.manifest.json"));
    let h1 = m1["outputs"].as_object().unwrap().values().next().unwrap();
    let h2 = m2["outputs"].as_object().unwrap().values().next().unwrap();
    assert_eq!(h1, h2, "same seed, same dataset hash");
}

#[test]
fn missing_required_flag_exits_2_and_names_the_flag() {
    let output = run(&["gen-data", "--task", "stack3", "--transitions", "10", "--out", "/tmp/x"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--seed"), "{stderr}");
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let output = run(&["train", "--bogus-flag", "1"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn unknown_subcommand_exits_2() {
    let output = run(&["frobnicate"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_a_diagnostic() {
    let output = run(&[
        "train",
        "--dataset",
        "/nonexistent/data.fwmd",
        "--seed",
        "1",
        "--out",
        "/tmp/nope.fwmc",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
}

#[test]
fn full_smoke_pipeline_produces_tables_and_identical_retrain_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    // Data + goal file.
    let output = run(&[
        "gen-data",
        "--task",
        "stack2",
        "--transitions",
        "60",
        "--seed",
        "3",
        "--out",
        &d("train.fwmd"),
        "--goal-out",
        &d("goal.json"),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    // Train twice with the same seed: identical checkpoint hashes.
    for name in ["m1.fwmc", "m2.fwmc"] {
        let output = run(&[
            "train",
            "--dataset",
            &d("train.fwmd"),
            "--preset",
            "smoke",
            "--seed",
            "5",
            "--out",
            &d(name),
            "--metrics",
            &d("metrics.csv"),
        ]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    }
    let h1 = fwm::hashing::hash_file(&dir.path().join("m1.fwmc")).unwrap();
    let h2 = fwm::hashing::hash_file(&dir.path().join("m2.fwmc")).unwrap();
    assert_eq!(h1, h2, "training is deterministic under a fixed seed");
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "one line per epoch");

    // Heads.
    let output = run(&[
        "train-probe",
        "--ckpt",
        &d("m1.fwmc"),
        "--dataset",
        &d("train.fwmd"),
        "--seed",
        "6",
        "--out",
        &d("m1p.fwmc"),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let output = run(&[
        "train-inhand",
        "--ckpt",
        &d("m1p.fwmc"),
        "--dataset",
        &d("train.fwmd"),
        "--seed",
        "6",
        "--out",
        &d("m1ph.fwmc"),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    // Eval data + both metrics.
    let output = run(&[
        "gen-data",
        "--task",
        "stack2",
        "--episodes",
        "3",
        "--expert",
        "optimal",
        "--seed",
        "8",
        "--out",
        &d("eval.fwmd"),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let output = run(&[
        "eval",
        "--metric",
        "rmse",
        "--ckpt",
        &d("m1ph.fwmc"),
        "--data",
        &d("eval.fwmd"),
        "--horizon",
        "2",
        "--out",
        &d("rmse.csv"),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let rmse = std::fs::read_to_string(dir.path().join("rmse.csv")).unwrap();
    assert_eq!(rmse.lines().count(), 3);
    assert!(rmse.starts_with("rmse,0,"));

    let output = run(&[
        "eval",
        "--metric",
        "rank",
        "--ckpt",
        &d("m1ph.fwmc"),
        "--data",
        &d("eval.fwmd"),
        "--task",
        "stack2",
        "--eps",
        "4",
        "--negatives",
        "3",
        "--seed",
        "9",
        "--out",
        &d("rank.csv"),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let rank = std::fs::read_to_string(dir.path().join("rank.csv")).unwrap();
    assert!(rank.contains("hits1,4,") && rank.contains("mrr,4,"), "{rank}");

    // Plan twice with one member: identical traces.
    for name in ["trace1.json", "trace2.json"] {
        let output = run(&[
            "plan",
            "--ensemble",
            &d("m1ph.fwmc"),
            "--goal",
            &d("goal.json"),
            "--heuristic",
            "pp",
            "--budget",
            "3",
            "--seed",
            "11",
            "--trace",
            &d(name),
        ]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    }
    let t1 = fwm::hashing::hash_file(&dir.path().join("trace1.json")).unwrap();
    let t2 = fwm::hashing::hash_file(&dir.path().join("trace2.json")).unwrap();
    assert_eq!(t1, t2, "planning is deterministic");
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace1.json")).unwrap())
            .unwrap();
    let steps = trace["trace"].as_array().unwrap();
    assert!(!steps.is_empty());
    assert_eq!(steps[0]["evaluated"], 10_000);
    assert_eq!(steps[0]["top"].as_array().unwrap().len(), 5);
}

#[test]
fn bench_smoke_emits_the_three_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let output = run(&[
        "bench",
        "--preset",
        "smoke",
        "--seed",
        "13",
        "--members",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    for table in ["rmse.csv", "ranking.csv", "planning.csv"] {
        let path = out.join(table);
        assert!(path.exists(), "missing {table}");
        assert!(std::fs::read_to_string(&path).unwrap().lines().count() >= 2);
    }
    assert!(out.join("bench.manifest.json").exists());
}

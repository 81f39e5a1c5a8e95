use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn flownet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flownet")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn synth(dir: &Path, rows: usize, cols: usize, steps: usize) -> Value {
    let spec = json!({
        "node_count": rows * cols, "rows": rows, "cols": cols, "steps": steps,
        "period": 24, "noise_sigma": 1.0, "seed": 9, "commercial_fraction": 0.25
    });
    fs::write(dir.join("spec.json"), spec.to_string()).unwrap();
    stdout_json(&flownet(&["synth", "--spec", "spec.json", "--out", "data"], dir))
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = flownet(&["frobnicate"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = flownet(&["train", "--config", "nope.json", "--out", "run"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn synth_writes_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let summary = synth(dir.path(), 4, 4, 100);
    assert_eq!((summary["steps"].as_u64(), summary["nodes"].as_u64()), (Some(100), Some(16)));
    let mut r = csv::Reader::from_path(dir.path().join("data/observations.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), 16);
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|row| row.len() == 16));
    assert!(dir.path().join("data/coords.csv").exists());
    let stamp: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("data/stamp.json")).unwrap()).unwrap();
    assert_eq!(stamp["seed"], 9);
    assert_eq!(stamp["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn synth_can_export_transfers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("spec.json"),
        json!({"node_count": 4, "rows": 2, "cols": 2, "steps": 30, "period": 6, "noise_sigma": 0.0, "seed": 1,
               "commercial_fraction": 0.5})
        .to_string(),
    )
    .unwrap();
    let out = stdout_json(&flownet(&["synth", "--spec", "spec.json", "--out", "d", "--transfers"], dir.path()));
    let bundle = flownet_cli::checkpoint::load_tensors(&dir.path().join(out["transfers"].as_str().unwrap())).unwrap();
    assert_eq!(bundle[0].0, "transfers");
    assert_eq!(bundle[0].1.shape(), &[29, 4, 4]);
}

#[test]
fn train_then_eval_reproduces_validation_mae() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3, 3, 400);
    let config = json!({
        "model": {"d": 8, "heads": 2, "experts": 2, "seed": 3},
        "train": {"max_epochs": 3, "seed": 3},
        "data": {"observations": "data/observations.csv", "geometry": "data/coords.csv"}
    });
    fs::write(dir.path().join("run.json"), config.to_string()).unwrap();
    let summary = stdout_json(&flownet(&["train", "--config", "run.json", "--out", "run"], dir.path()));
    for f in ["best.json", "best.bin", "fit_report.jsonl", "stamp.json", "config.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f} missing");
    }
    let report = fs::read_to_string(dir.path().join("run/fit_report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 3);

    let data = ["--data", "data/observations.csv", "--geometry", "data/coords.csv"];
    let mut args = vec!["eval", "--ckpt", "run/best.json", "--split", "val"];
    args.extend(data);
    let eval = stdout_json(&flownet(&args, dir.path()));
    let (a, b) = (eval["mae"].as_f64().unwrap(), summary["best_val_mae"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    assert!(eval["stamp"]["build"].as_str().unwrap().starts_with("flownet-cli"));

    let mut args = vec!["export", "allocation", "--ckpt", "run/best.json", "--out", "alloc.csv"];
    args.extend(data);
    stdout_json(&flownet(&args, dir.path()));
    let m = flownet_cli::export::read_matrix(&dir.path().join("alloc.csv")).unwrap();
    assert_eq!(m.shape(), &[9, 9]);
    for row in m.data().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-5);
        assert!(row.iter().all(|v| *v >= 0.0));
    }
    assert!(dir.path().join("alloc.csv.stamp.json").exists());

    let mut args = vec!["export", "mask-stats", "--ckpt", "run/best.json", "--out", "mask.csv", "--split", "test"];
    args.extend(data);
    let out = stdout_json(&flownet(&args, dir.path()));
    assert_eq!(out["rows"], 27);
    let text = fs::read_to_string(dir.path().join("mask.csv")).unwrap();
    assert!(text.starts_with("node,patch,radius,out_degree"));

    let mut args = vec!["export", "allocation", "--ckpt", "run/best.json", "--out", "x.csv", "--layer", "7"];
    args.extend(data);
    assert!(!flownet(&args, dir.path()).status.success());
}

#[test]
fn eval_rejects_mismatched_data() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3, 3, 300);
    fs::write(
        dir.path().join("run.json"),
        json!({"model": {"d": 8, "heads": 2, "experts": 2}, "train": {"max_epochs": 1},
               "data": {"observations": "data/observations.csv", "geometry": "data/coords.csv"}})
        .to_string(),
    )
    .unwrap();
    stdout_json(&flownet(&["train", "--config", "run.json", "--out", "run"], dir.path()));
    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    synth(&other, 2, 2, 300);
    let out = flownet(
        &["eval", "--ckpt", "run/best.json", "--data", "other/data/observations.csv", "--geometry", "other/data/coords.csv"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodes"));
}

#[test]
fn seed_sweep_reports_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2, 2, 300);
    fs::write(
        dir.path().join("run.json"),
        json!({"model": {"d": 4, "heads": 2, "experts": 1}, "train": {"max_epochs": 1},
               "data": {"observations": "data/observations.csv", "geometry": "data/coords.csv"}})
        .to_string(),
    )
    .unwrap();
    let out = stdout_json(&flownet(&["train", "--config", "run.json", "--out", "sweep", "--seeds", "1,2"], dir.path()));
    assert_eq!(out["runs"].as_array().unwrap().len(), 2);
    let maes: Vec<f64> = out["runs"].as_array().unwrap().iter().map(|r| r["test_mae"].as_f64().unwrap()).collect();
    assert!((out["test_mae"]["mean"].as_f64().unwrap() - (maes[0] + maes[1]) / 2.0).abs() < 1e-12);
    assert!(dir.path().join("sweep/seed_2/best.json").exists());
}

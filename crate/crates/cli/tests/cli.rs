use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edgescale"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn edgescale")
}

fn scenario(dir: &Path, approach: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "_note": "tiny test scenario",
  "seed": 5,
  "approach": "{approach}",
  "space": {{"num_stages": 2, "depth_choices": [1, 2], "width_choices": [0.5, 1.0],
             "kernel_choices": [3, 5], "bits_choices": [8, 32]}},
  "fleet": {{"training_real": 2, "synthetic": 2, "holdout_monotone": 3,
             "holdout_adversarial": 1, "holdout_synthetic": 2}},
  "predictor": {{"hidden": [8], "training": {{"epochs": 40}}}},
  "stage_one": {{"samples_per_device": 60}},
  "proxy": {{"inner": {{"kind": "brute_force", "limit": 128}}}},
  "amortized": {{"optimizer": {{"hidden": [8], "training": {{"epochs": 30}}}}}}{extra}
}}"#
    );
    let path = dir.join(format!("{approach}.json"));
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn cost_table_prints_baseline_hours() {
    let o = run(&["cost-table", "--samples", "5000", "--seconds", "30", "--devices", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "label,devices,measurements_per_device,total_measurements,hours,ratio_vs_baseline"
    );
    assert_eq!(lines.next().unwrap(), "per_device_baseline,1,5000,5000,41.67,1");

    let empty = run(&["cost-table", "--devices", "0"]);
    assert!(empty.status.success());
    assert_eq!(stdout(&empty).lines().count(), 1);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "approach": "proxy_reuse", "spaec": {}}"#).unwrap();
    let o = run(&["gen-fleet", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("spaec"));

    let missing = run(&["gen-fleet", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let good = scenario(dir.path(), "proxy_reuse", "");
    let o = run(&["optimize", "--config", good.to_str().unwrap(), "--approach", "quantum"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_fleet_respects_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "proxy_reuse", "");
    let read = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = run(&[
            "gen-fleet",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("fleet.json")).unwrap()
    };
    assert_eq!(read("1", "a"), read("1", "b"));
    assert_ne!(read("1", "c"), read("2", "d"));
}

#[test]
fn optimize_report_and_skip_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "proxy_reuse", "");
    let out = dir.path().join("run");
    let args = [
        "optimize",
        "--config",
        cfg.to_str().unwrap(),
        "--approach",
        "proxy",
        "--out",
        out.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(
        matches!(first.status.code(), Some(0) | Some(3)),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    for f in [
        "summary.json",
        "devices.csv",
        "stages.csv",
        "ledger.csv",
        "cost.csv",
        "fleet.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let devices = std::fs::read_to_string(out.join("devices.csv")).unwrap();

    let mut again = args.to_vec();
    again.push("--skip-training");
    let second = run(&again);
    assert_eq!(second.status.code(), first.status.code());
    assert_eq!(std::fs::read_to_string(out.join("devices.csv")).unwrap(), devices);

    let report = run(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(report.status.code(), first.status.code());
    assert!(stdout(&report).contains("ledger total"));
}

#[test]
fn amortized_pipeline_through_train_predictors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "learn_to_optimize", "");
    let out = dir.path().join("l2o");
    let train = run(&[
        "train-predictors",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(out.join("models/optimizer.json").exists());
    let opt = run(&[
        "optimize",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--skip-training",
    ]);
    assert!(
        matches!(opt.status.code(), Some(0) | Some(3)),
        "{}",
        String::from_utf8_lossy(&opt.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let devices = summary["devices"].as_array().unwrap();
    assert_eq!(devices.len(), 2);
    assert!(devices.iter().all(|d| d["measurements"].as_u64().unwrap() <= 2));
}

#[test]
fn infeasible_results_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(
        dir.path(),
        "proxy_reuse",
        r#", "constraints": {"latency_absolute": 1e-9}"#,
    );
    let out = dir.path().join("run");
    let o = run(&[
        "optimize",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["infeasible"], true);
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}

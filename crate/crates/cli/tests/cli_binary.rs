//! The `ctpack` executable.

mod common;

use std::process::Command;

fn ctpack() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctpack"))
}

#[test]
fn missing_thresholds_exit_code_and_message() {
    let scan = common::scan();
    let out = tempfile::tempdir().unwrap();
    let cfg = scan.write_config(out.path(), false);
    let o = ctpack()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(out.path().join("res"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("thresholds"), "{err}");
    assert!(out.path().join("res/meta/subsample.json").exists());
}

#[test]
fn step_commands_resume_a_session() {
    let scan = common::scan();
    let out = tempfile::tempdir().unwrap();
    let cfg = scan.write_config(out.path(), true);
    let res = out.path().join("res");
    let o = ctpack().arg("tiers").arg("--config").arg(&cfg).arg("--out").arg(&res).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let steps: Vec<&str> = report["steps"].as_array().unwrap().iter().map(|s| s["step"].as_str().unwrap()).collect();
    assert_eq!(steps, ["align", "subsample", "thresholds", "tiers"]);

    // no config needed once the session exists
    let o = ctpack().arg("grid").arg("--out").arg(&res).arg("--pad").arg("4").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["steps"].as_array().unwrap().len(), 1);
    assert_eq!(report["objects"], 30);
    let grid: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(res.join("meta/grid.json")).unwrap()).unwrap();
    assert_eq!(grid["pad"], 4);

    let o = ctpack().arg("grid").arg("--out").arg(out.path().join("nothing")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_writes_a_runnable_scan() {
    let out = tempfile::tempdir().unwrap();
    let scan = out.path().join("scan");
    let o = ctpack()
        .args(["synth", "--dims", "120", "120", "300", "--tiers", "1", "--rows", "2", "--cols", "2", "--out"])
        .arg(&scan)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ctpack.toml", "alignment.txt", "layout.csv", "truth.json", "slices/scan.json"] {
        assert!(scan.join(f).exists(), "{f}");
    }
    let cfg = ctpack::Config::load(&scan.join("ctpack.toml")).unwrap();
    assert!(cfg.thresholds.is_some() && cfg.alignment.is_some());
}

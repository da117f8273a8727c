//! End-to-end runs of the `rabi-ccd` binary.

use std::path::PathBuf;
use std::process::Command;

use rabi_ccd::cli::read_csv;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rabi-ccd-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rabi-ccd"))
}

#[test]
fn config_file_then_flags() {
    let dir = scratch("config");
    let config = dir.join("run.toml");
    std::fs::write(&config, "seed = 5\ntrajectories = 2\ndrives = [\"2pi*5\"]\n[plan]\nt_final = 2e-4\noutputs = 4\n")
        .unwrap();
    let out = dir.join("ccd.csv");
    let status = bin()
        .args(["ccd-demo", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(["--trajectories", "3"])
        .status()
        .unwrap();
    assert!(status.success());

    let (header, rows) = read_csv(&out).unwrap();
    assert_eq!(header, ["time_s", "mean_sx_omega5khz", "stderr_sx_omega5khz"]);
    assert_eq!(rows.len(), 5);
    assert!((rows[0][1] - 1.0).abs() < 1e-12);

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("ccd.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["spec"]["n_trajectories"], 3);
    assert_eq!(meta["config"]["spec"]["master_seed"], 5);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = scratch("bad");
    let config = dir.join("bad.toml");
    std::fs::write(&config, "trajectoris = 2\n").unwrap();
    let output = bin().args(["coherence", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("trajectoris"), "{stderr}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn invalid_layer_reports_json_error() {
    let output = bin().args(["rabi", "--layer", "3", "--out", "/nonexistent/never.csv"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let line = String::from_utf8_lossy(&output.stderr);
    let record: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert!(record.get("error").is_some(), "{record}");
}

#[test]
fn validate_passes() {
    let output = bin().arg("validate").output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stdout));
}

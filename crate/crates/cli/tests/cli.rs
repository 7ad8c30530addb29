//! End-to-end checks of the fluctlab binary: exit codes, file outputs,
//! argv+seed determinism, and config-file handling.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluctlab"))
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

#[test]
fn chi_table_and_alpha_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "chi",
            "--alphas",
            "0,0.25,0.5,0.75",
            "--tol",
            "1e-6",
            "--output-dir",
        ])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(dir.path(), "chi.csv");
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    let first: Vec<&str> = rows[0].split(',').collect();
    let value: f64 = first[1].parse().unwrap();
    assert!((value + 0.5).abs() < 1e-12);
    assert!(csv.starts_with("# config_hash="));
}

#[test]
fn identity_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["identity-suite", "--n", "128", "--alpha", "0.75", "--seed", "7", "--pairs", "5"])
        .arg("--output-dir")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(dir.path(), "identity.csv");
    assert!(csv.lines().skip(2).all(|row| row.ends_with("true")));
}

#[test]
fn same_argv_same_bytes() {
    let run = |dir: &Path| {
        let status = bin()
            .args(["fluct", "--n", "32", "--replicas", "3", "--t-end", "0", "--seed", "11"])
            .arg("--output-dir")
            .arg(dir)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run(d1.path());
    run(d2.path());
    assert_eq!(read(d1.path(), "fluct.jsonl"), read(d2.path(), "fluct.jsonl"));
    assert_eq!(
        read(d1.path(), "metadata.jsonl"),
        read(d2.path(), "metadata.jsonl")
    );

    // a different seed must change the samples
    let d3 = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["fluct", "--n", "32", "--replicas", "3", "--t-end", "0", "--seed", "12"])
        .arg("--output-dir")
        .arg(d3.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert_ne!(read(d1.path(), "fluct.jsonl"), read(d3.path(), "fluct.jsonl"));
}

#[test]
fn env_seed_fallback() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for dir in [d1.path(), d2.path()] {
        let status = bin()
            .args(["fluct", "--n", "32", "--replicas", "2", "--t-end", "0"])
            .arg("--output-dir")
            .arg(dir)
            .env("FLUCTLAB_SEED", "777")
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read(d1.path(), "fluct.jsonl"), read(d2.path(), "fluct.jsonl"));
    assert!(read(d1.path(), "metadata.jsonl").contains("\"seed\":777"));
}

#[test]
fn config_file_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.json");
    fs::write(
        &cfg_path,
        r#"{"schema_version":"1","seed":5,"chi":{"alphas":[0.0,0.25],"tol":1e-6}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["chi", "--config"])
        .arg(&cfg_path)
        .args(["--alphas", "0.75"])
        .arg("--output-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(&out, "chi.csv");
    // flag overrides the file: a single α = 0.75 row
    assert_eq!(csv.lines().skip(2).count(), 1);
}

#[test]
fn rejects_unknown_config_keys_and_bad_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.json");
    fs::write(&cfg_path, r#"{"schema_version":"1","no_such_key":1}"#).unwrap();
    let output = bin()
        .args(["chi", "--config"])
        .arg(&cfg_path)
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("kind=config"), "stderr: {stderr}");

    fs::write(&cfg_path, r#"{"schema_version":"99"}"#).unwrap();
    let output = bin()
        .args(["chi", "--config"])
        .arg(&cfg_path)
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn bad_flag_is_config_error() {
    let output = bin().args(["chi", "--no-such-flag"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("kind=config"));
}

#[test]
fn invalid_alpha_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["chi", "--alphas", "1.5", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn simulate_and_mckv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "simulate", "--model", "kuramoto", "--alpha", "0.25", "--n", "64", "--dt", "0.01",
            "--t-end", "0.1", "--seed", "3", "--record-stride", "5",
        ])
        .arg("--output-dir")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(dir.path(), "trajectory.csv");
    assert!(csv.lines().nth(1).unwrap().starts_with("time,observable_id,value"));
    assert!(csv.contains("order_param"));
    assert!(csv.contains("mart:sin_theta"));
    let meta = read(dir.path(), "metadata.jsonl");
    assert!(meta.contains("\"command\":\"simulate\""));
    assert!(meta.contains("config_hash"));

    let dir2 = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "mckv", "--model", "free", "--cells", "64", "--t-end", "0.05", "--initial", "tilted",
        ])
        .arg("--output-dir")
        .arg(dir2.path())
        .status()
        .unwrap();
    assert!(status.success());
    let density = read(dir2.path(), "density.csv");
    let mass: f64 = density
        .lines()
        .skip(2)
        .map(|row| row.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum::<f64>()
        * (std::f64::consts::TAU / 64.0);
    assert!((mass - 1.0).abs() < 1e-8, "density mass {mass}");
}

#[test]
fn scaling_probe_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "scaling", "--model", "probe", "--alpha", "0.75", "--statistic", "coupling",
            "--n-ladder", "64,128,256", "--replicas", "2", "--sigma", "0", "--dt", "0.01",
            "--t-end", "0.5", "--seed", "2",
        ])
        .arg("--output-dir")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(dir.path(), "scaling.csv");
    for row in csv.lines().skip(2) {
        assert!(row.ends_with("deterministic"), "row: {row}");
    }
}

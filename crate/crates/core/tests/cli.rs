use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use echolab::cli::{RunConfig, REPORT_FILES};
use echolab::forward::Dataset;
use tempfile::TempDir;

const QUICK: &str = include_str!("../examples/configs/quick.json");

fn echolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echolab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_ok(args: &[&str]) {
    let out = echolab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_byte_stable_per_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"noise_sigma": 0.05}"#);
    let dirs = ["a", "b", "c"].map(|d| tmp.path().join(d).to_string_lossy().into_owned());
    for (dir, seed) in dirs.iter().zip(["7", "7", "8"]) {
        run_ok(&["synth", "--config", &cfg, "--seed", seed, "--out", dir]);
    }
    let read = |d: &str| fs::read(Path::new(d).join("dataset.json")).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
    assert_ne!(read(&dirs[0]), read(&dirs[2]));
    assert!(Path::new(&dirs[0]).join("dataset_csv").is_dir());
}

#[test]
fn synth_metadata_round_trips() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"noise_sigma": 0.05}"#);
    let out = tmp.path().join("o");
    run_ok(&["synth", "--config", &cfg, "--seed", "42", "--out", out.to_str().unwrap(), "--format", "json"]);
    let ds = Dataset::read_json(&out.join("dataset.json")).unwrap();
    assert_eq!(ds.meta.seed, 42);
    assert_eq!(ds.meta.noise_sigma, 0.05);
    assert!(!out.join("dataset_csv").exists());

    let written: RunConfig = serde_json::from_str(&fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(written.noise_sigma, 0.05);
    assert_eq!(written.truth, RunConfig::default().truth);
}

#[test]
fn noise_free_synth_matches_forward_model() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    run_ok(&["synth", "--seed", "1", "--out", out.to_str().unwrap()]);
    let ds = Dataset::read_json(&out.join("dataset.json")).unwrap();
    let cfg = RunConfig::default();
    let direct = echolab::forward::synth_dataset(&cfg.truth, &cfg.pump, &cfg.probe, &cfg.grid, 0.0, 1).unwrap();
    for (a, b) in ds.joint.iter().zip(&direct.joint) {
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-8 * y.abs().max(1e-12), "{x} vs {y}");
            }
        }
    }
}

#[test]
fn report_bundle_has_every_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "quick.json", QUICK);
    let out = tmp.path().join("report");
    run_ok(&["report", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    for f in REPORT_FILES.iter().chain(&["run_config.json"]) {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert!(summary["partial"].as_array().unwrap().is_empty());
}

#[test]
fn echo_and_baseline_formats() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "quick.json", QUICK);
    let (csv, json) = (tmp.path().join("csv"), tmp.path().join("json"));
    run_ok(&["echo", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    run_ok(&["echo", "--config", &cfg, "--out", json.to_str().unwrap(), "--format", "json"]);
    assert!(csv.join("echo_monotone_cubic.csv").is_file());
    assert!(json.join("echo_monotone_cubic.json").is_file());
    assert!(csv.join("plateau_monotone_cubic.json").is_file());
    assert!(csv.join("echo_summary.json").is_file());

    let b = tmp.path().join("baseline");
    run_ok(&["baseline", "--config", &cfg, "--seed", "2", "--out", b.to_str().unwrap()]);
    assert!(fs::read_dir(&b).unwrap().count() > 1);
}

#[test]
fn traj_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "quick.json", QUICK);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        run_ok(&["traj", "--config", &cfg, "--seed", "5", "--out", d.to_str().unwrap()]);
    }
    for f in ["trajectories.csv", "final_probability.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        cfg.validate().unwrap();
    }
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(echolab(&["synth", "--bogus", "--out", o]).status.code(), Some(2));
    assert_eq!(echolab(&["frobnicate", "--out", o]).status.code(), Some(2));
    assert_eq!(echolab(&["synth", "--out", o]).status.code(), Some(2), "missing seed");
    let bad = write_config(tmp.path(), "bad.json", r#"{"noise_sigma": "#);
    assert_eq!(echolab(&["synth", "--config", &bad, "--seed", "1", "--out", o]).status.code(), Some(2));
    let invalid = write_config(tmp.path(), "invalid.json", r#"{"runs": 2, "truth": {"mu_khz": [6,6,6], "sigma_khz": [-1,1,1], "rho": [0.5,0.5,0.5], "alpha": [0,0,0]}}"#);
    assert_eq!(echolab(&["synth", "--config", &invalid, "--seed", "1", "--out", o]).status.code(), Some(2));
}

#[test]
fn io_errors_exit_with_four() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("not_a_dir");
    fs::write(&file, "x").unwrap();
    assert_eq!(echolab(&["synth", "--seed", "1", "--out", file.to_str().unwrap()]).status.code(), Some(4));
    let missing = tmp.path().join("nope.json");
    let o = tmp.path().join("o");
    let code = echolab(&["synth", "--config", missing.to_str().unwrap(), "--seed", "1", "--out", o.to_str().unwrap()]).status.code();
    assert_eq!(code, Some(4));
}

//! The `fhenav` binary end to end: fixtures, exit codes and report files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use fhenav::layers::ArchConfig;

fn fhenav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhenav")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_tiny_arch(dir: &Path) -> PathBuf {
    let arch = ArchConfig {
        frame_height: 16,
        frame_width: 16,
        row_slots: 64,
        grid_rows: 16,
        conv_channels: vec![1, 2, 2, 2],
        strides: vec![2, 2, 1],
        ..ArchConfig::default()
    };
    let path = dir.join("arch.json");
    std::fs::write(&path, serde_json::to_string(&arch).unwrap()).unwrap();
    path
}

fn genfix(dir: &Path, arch: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("fix{seed}"));
    let res = fhenav(&["genfix", "--seed", seed, "--config", arch.to_str().unwrap(), "--count", "8", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

fn run_report(fix: &Path, extra: &[&str]) -> (i32, Option<Value>) {
    let report = fix.join(format!("report{}.json", extra.len()));
    let weights = fix.join("weights.json");
    let inputs = fix.join("inputs");
    let mut args = vec![
        "run",
        "--weights",
        weights.to_str().unwrap(),
        "--inputs",
        inputs.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let res = fhenav(&args);
    let json = std::fs::read_to_string(&report).ok().map(|t| serde_json::from_str(&t).unwrap());
    (code(&res), json)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in walk(dir) {
        files.push((entry.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&entry).unwrap()));
    }
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    std::fs::read_dir(dir)
        .unwrap()
        .flat_map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() { walk(&p) } else { vec![p] }
        })
        .collect()
}

#[test]
fn genfix_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let arch = write_tiny_arch(tmp.path());
    let a = tree(&genfix(tmp.path(), &arch, "4"));
    let other = TempDir::new().unwrap();
    let b = tree(&genfix(other.path(), &arch, "4"));
    assert_eq!(a, b);
    assert_eq!(a.len(), 9);
    let c = tree(&genfix(tmp.path(), &arch, "5"));
    assert_ne!(a, c);
}

#[test]
fn passing_run_exits_zero_and_writes_report() {
    let tmp = TempDir::new().unwrap();
    let arch = write_tiny_arch(tmp.path());
    let fix = genfix(tmp.path(), &arch, "4");
    let (status, report) = run_report(&fix, &[]);
    assert_eq!(status, 0);
    let report = report.unwrap();
    assert_eq!(report["schema"], "parity-report/v1");
    assert_eq!(report["passed"], true);
    assert_eq!(report["inputs"], 8);
    assert_eq!(report["blocks"].as_array().unwrap().len(), 7);
}

#[test]
fn bypassed_activations_leave_only_encryption_error() {
    let tmp = TempDir::new().unwrap();
    let arch = write_tiny_arch(tmp.path());
    let fix = genfix(tmp.path(), &arch, "4");
    let (status, report) = run_report(&fix, &["--bypass-activations"]);
    assert_eq!(status, 0);
    for b in report.unwrap()["blocks"].as_array().unwrap() {
        assert!(b["mae_vs_exact"].as_f64().unwrap() <= 1e-5, "{b}");
    }
}

#[test]
fn tolerance_failure_exits_one() {
    let tmp = TempDir::new().unwrap();
    let arch = write_tiny_arch(tmp.path());
    let fix = genfix(tmp.path(), &arch, "4");
    let path = fix.join("weights.json");
    let mut w: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    // A constant tanh polynomial is evaluated faithfully but is far from tanh.
    let mut coeffs = vec![0.0; 9];
    coeffs[0] = 1.0;
    w["config"]["activations"]["shared1"]["tanh_coeffs"] = serde_json::json!(coeffs);
    std::fs::write(&path, w.to_string()).unwrap();
    let (status, report) = run_report(&fix, &["--blocks", "linear2"]);
    assert_eq!(status, 1);
    let report = report.unwrap();
    assert_eq!(report["passed"], false);
    assert!(report["blocks"][0]["mae_vs_poly"].as_f64().unwrap() < 1e-9);
}

#[test]
fn errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let arch = write_tiny_arch(tmp.path());
    let fix = genfix(tmp.path(), &arch, "4");
    assert_eq!(run_report(&fix, &["--blocks", "conv9"]).0, 2);
    assert_eq!(run_report(&fix, &["--levels", "3"]).0, 2);
    assert_eq!(run_report(&fix, &["--backend", "ckks", "--blocks", "conv1"]).0, 2);
    assert_eq!(code(&fhenav(&["run", "--inputs", "/nonexistent/inputs"])), 2);
}

#[test]
fn ckks_backend_runs_a_shallow_block() {
    let tmp = TempDir::new().unwrap();
    let arch = write_tiny_arch(tmp.path());
    let fix = genfix(tmp.path(), &arch, "4");
    let (status, report) = run_report(&fix, &["--backend", "ckks", "--blocks", "linear3", "--rotsum", "tree"]);
    assert_eq!(status, 0);
    let report = report.unwrap();
    assert_eq!(report["backend"], "ckks");
    let block = &report["blocks"][0];
    assert_eq!(block["label"], "linear3");
    assert!(block["mae_vs_poly"].as_f64().unwrap() <= 1e-2);
    assert_eq!(block["levels_consumed"], block["static_depth"]);
}

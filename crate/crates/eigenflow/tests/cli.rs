use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn specs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigenflow"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn eig_dirichlet_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let spec = specs().join("laplace1d.json");
    let out = run(dir.path(), &["eig-dirichlet", "--spec", spec.to_str().unwrap(), "--R", "1", "--h", "0.05"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    let file = report(dir.path(), "eig-dirichlet.json");
    assert_eq!(stdout, file);
    assert_eq!(file["manifest"]["command"], "eig-dirichlet");
    assert_eq!(file["manifest"]["spec_sha256"].as_str().unwrap().len(), 64);
    let csv = std::fs::read_to_string(dir.path().join("eig-dirichlet.csv")).unwrap();
    assert!(csv.starts_with("x0,psi"));
    assert_eq!(csv.lines().count(), 40);
}

#[test]
fn exhaust_reports_each_radius() {
    let dir = tempfile::tempdir().unwrap();
    let spec = specs().join("ou1d.json");
    let out = run(
        dir.path(),
        &["exhaust", "--spec", spec.to_str().unwrap(), "--radii", "1,2,4", "--h", "0.02"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(dir.path(), "exhaust.json");
    let csv = std::fs::read_to_string(dir.path().join("exhaust.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(v["failures"].as_array().unwrap().is_empty());
}

#[test]
fn seeded_runs_are_reproducible() {
    let spec = specs().join("ou1d.json");
    let args = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = run(
            dir.path(),
            &[
                "--threads", "2", "risk", "--spec", spec.to_str().unwrap(), "--T", "0.5", "--policy", "0",
                "--paths", "500", "--dt", "0.01", "--seed", seed,
            ],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        report(dir.path(), "risk.json")["result"].clone()
    };
    let (a, b, c) = (args("7"), args("7"), args("8"));
    assert_eq!(a, b);
    assert_ne!(a["estimate"], c["estimate"]);
    assert_eq!(a["sampling"]["seed"], 7);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["eig-dirichlet", "--spec", "does-not-exist.json", "--R", "1"]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "Io");
    assert_eq!(v["error"]["command"], "eig-dirichlet");
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use emfg_core::discretization::{write_field, DiscreteField, SpaceTimeGrid};
use emfg_core::models::{CommonParams, Sql};
use emfg_core::solver::base_solution;
use serde_json::Value;

fn emfg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emfg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_sql_defaults_writes_four_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = emfg(dir.path(), &["solve"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["u.txt", "m.txt", "trace.json", "certificate.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let cert = json(&dir.path().join("certificate.json"));
    assert_eq!(cert["certificate"]["all_pass"], Value::Bool(true));
    assert_eq!(cert["config"]["grid"]["nx"], 32);
    assert_eq!(cert["config"]["model"]["name"], "sql");
    let trace = json(&dir.path().join("trace.json"));
    let steps = trace["trace"].as_array().unwrap();
    assert_eq!(steps.first().unwrap()["theta"], 0.0);
    assert_eq!(steps.last().unwrap()["theta"], 1.0);

    // Same config, same bytes.
    let names = ["trace.json", "certificate.json", "u.txt", "m.txt"];
    let first: Vec<String> = names.iter().map(|n| fs::read_to_string(dir.path().join(n)).unwrap()).collect();
    assert_eq!(code(&emfg(dir.path(), &["solve"])), 0);
    for (name, before) in names.iter().zip(&first) {
        let after = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(after == *before, "{name} differs between runs");
    }

    // Certify the stored fields, then against a different grid.
    assert_eq!(code(&emfg(dir.path(), &["certify"])), 0);
    assert_eq!(code(&emfg(dir.path(), &["certify", "--override", "grid.nx=16"])), 3);
}

#[test]
fn solve_rejects_coarse_grid() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&emfg(dir.path(), &["solve", "--override", "grid.nx=4"])), 3);
}

#[test]
fn solve_congestion_keeps_positive_gap() {
    let dir = tempfile::tempdir().unwrap();
    let o = emfg(
        dir.path(),
        &[
            "solve",
            "--override",
            "model.name=congestion",
            "--override",
            "model.c0=0",
            "--override",
            "grid.horizon=0.5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = json(&dir.path().join("trace.json"));
    let gaps: Vec<f64> = trace["trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["min_gap"].as_f64().unwrap())
        .collect();
    assert!(gaps.iter().all(|&g| g > 0.0), "{gaps:?}");
}

#[test]
fn stall_exits_four_with_theta_star() {
    let dir = tempfile::tempdir().unwrap();
    let o = emfg(
        dir.path(),
        &["solve", "--override", "continuation.newton_max_iter=1", "--override", "continuation.max_halvings=1"],
    );
    assert_eq!(code(&o), 4);
    let trace = json(&dir.path().join("trace.json"));
    assert_eq!(trace["stall"]["theta_star"], 0.0);
    assert!(!dir.path().join("certificate.json").exists());
}

#[test]
fn check_assumptions_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let flat = emfg(dir.path(), &["check-assumptions", "--override", "model.kappa_v=0", "--override", "check.samples=300"]);
    assert_eq!(code(&flat), 0, "{}", String::from_utf8_lossy(&flat.stderr));

    let o = emfg(dir.path(), &["check-assumptions", "--override", "check.samples=300"]);
    assert_eq!(code(&o), 1);
    let report = json(&dir.path().join("assumptions.json"));
    assert!(report["assumptions"]["checks"]["HX1"]["violations"].as_u64().unwrap() > 0);
    assert_eq!(report["config"]["check"]["samples"], 300);

    assert_eq!(code(&emfg(dir.path(), &["check-assumptions", "--override", "check.samples=0"])), 2);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[grid]\nnx = 16\nresolution = 3\n").unwrap();
    assert_eq!(code(&emfg(dir.path(), &["solve", "--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&emfg(dir.path(), &["solve", "--override", "grid"])), 2);
    assert_eq!(code(&emfg(dir.path(), &["solve", "--config", "/nonexistent/run.toml"])), 2);
}

#[test]
fn certify_exact_constant_fields() {
    let dir = tempfile::tempdir().unwrap();
    let grid = SpaceTimeGrid::new(1, 16, 16, 1.0).unwrap();
    let params = CommonParams {
        kappa_v: 0.0,
        amplitude: 0.0,
        ..CommonParams::default()
    };
    let model = Sql::new(params).unwrap();
    let u = base_solution(&model, &grid);
    let m = DiscreteField::new(&grid, vec![1.0; grid.len()]).unwrap();
    write_field(&grid, &u, fs::File::create(dir.path().join("u.txt")).unwrap()).unwrap();
    write_field(&grid, &m, fs::File::create(dir.path().join("m.txt")).unwrap()).unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[model]\nkappa_v = 0.0\namplitude = 0.0\n\n[grid]\nnx = 16\nnt = 16\n").unwrap();
    let o = emfg(dir.path(), &["certify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cert = json(&dir.path().join("certificate.json"));
    assert_eq!(cert["certificate"]["all_pass"], Value::Bool(true));

    fs::remove_file(dir.path().join("m.txt")).unwrap();
    assert_eq!(code(&emfg(dir.path(), &["certify", "--config", cfg.to_str().unwrap()])), 3);
}

#[test]
fn convergence_order_in_window() {
    let dir = tempfile::tempdir().unwrap();
    let o = emfg(dir.path(), &["convergence"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("convergence.json"));
    let orders = report["convergence"]["u_orders"].as_array().unwrap();
    let last = orders.last().unwrap().as_f64().unwrap();
    assert!((1.7..=2.3).contains(&last), "{last}");
    assert_eq!(code(&emfg(dir.path(), &["convergence", "--override", "convergence.nx=[16, 24, 64]"])), 2);
}

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn run(dir: &Path, config: &str, extra: &[&str]) -> (i32, Value) {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_parabolic-nonlocal"))
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(&out)
        .arg("--quiet")
        .args(extra)
        .env("PARABOLIC_NONLOCAL_THREADS", "2")
        .status()
        .unwrap();
    let report = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    (status.code().unwrap(), report)
}

#[test]
fn verify_form_on_holder_field() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = run(dir.path(), r#"{"command": "verify-form", "problem": {"n_modes": 6}}"#, &[]);
    assert_eq!(code, 0);
    let r = &rep["results"];
    assert!((r["alpha_hat"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((r["m_hat"].as_f64().unwrap() - 1.5).abs() < 1e-6);
    assert_eq!(r["dini"]["dini_pass"], Value::Bool(true));
    assert_eq!(rep["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn solve_heat_preset() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = run(
        dir.path(),
        r#"{"command": "solve", "problem": {"preset": "heat_timevarying", "n_modes": 6, "n_steps": 64}}"#,
        &[],
    );
    assert_eq!(code, 0);
    assert!(rep["results"]["solve"]["residual"].as_f64().unwrap() <= 1e-8);
    let csv = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 66);
    assert!(csv.starts_with("t,c1,c2,c3,c4,c5,c6,h_norm,v_norm"));
}

#[test]
fn converge_writes_nonincreasing_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = run(dir.path(), r#"{"command": "converge", "problem": {"n_modes": 16, "coefficient": "modulated"}}"#, &[]);
    assert_eq!(code, 0);
    assert_eq!(rep["results"]["nonincreasing"], Value::Bool(true));
    let csv = fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    let errs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(errs.len(), 3);
    assert!(errs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn evi_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = run(dir.path(), r#"{"command": "evi", "problem": {"n_modes": 3, "n_steps": 256}}"#, &[]);
    assert_eq!(code, 0);
    assert!(rep["results"]["closed_form_error"].as_f64().unwrap() < 1e-4);
    assert!(rep["results"]["evi_residual"].as_f64().unwrap() >= rep["results"]["evi_floor"].as_f64().unwrap());
}

#[test]
fn propagate_is_contractive() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = run(dir.path(), r#"{"command": "propagate", "problem": {"n_modes": 4, "n_steps": 32}}"#, &[]);
    assert_eq!(code, 0);
    assert!(rep["results"]["max_norm_increase"].as_f64().unwrap() <= 0.0);
}

#[test]
fn config_errors_exit_one_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let (code, rep) = run(dir.path(), r#"{"command": "solve", "problem": {"nonlinearity": "bogus"}}"#, &[]);
    assert_eq!(code, 1);
    assert_eq!(rep["status"], "config_error");
    assert!(rep["error"].as_str().unwrap().contains("bogus"));
    let (code, _) = run(dir.path(), r#"{"command": "launch"}"#, &[]);
    assert_eq!(code, 1);
    let (code, _) = run(dir.path(), r#"{"command": "solve", "solver": {"damping": 1.5}}"#, &[]);
    assert_eq!(code, 1);
}

#[test]
fn audit_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"command": "solve", "problem": {"nonlinearity": "linear_damping", "condition_scale": 3.0, "r0": 0.5, "n_modes": 2}}"#;
    let (code, rep) = run(dir.path(), cfg, &[]);
    assert_eq!(code, 2);
    assert_eq!(rep["results"]["audit"]["pass"], Value::Bool(false));
}

#[test]
fn stalled_solver_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"command": "solve", "problem": {"preset": "heat_timevarying", "n_modes": 4, "n_steps": 64}, "solver": {"max_inner": 2}}"#;
    let (code, rep) = run(dir.path(), cfg, &[]);
    assert_eq!(code, 3);
    assert!(rep["error"].as_str().unwrap().contains("stalled"));
}

#[test]
fn reports_are_deterministic_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"command": "solve", "problem": {"nonlinearity": "saturating_damping", "r0": 6.0, "n_modes": 4, "n_steps": 64}}"#;
    let (code, a) = run(dir.path(), cfg, &["--seed", "7"]);
    assert_eq!(code, 0);
    let first = fs::read(dir.path().join("out/report.json")).unwrap();
    let (_, _) = run(dir.path(), cfg, &["--seed", "7"]);
    assert_eq!(first, fs::read(dir.path().join("out/report.json")).unwrap());
    assert_eq!(a["seed"], 7);
    assert_eq!(a["config"]["problem"]["seed"], 7);
}

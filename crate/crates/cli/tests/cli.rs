use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfg_cli::RunConfig;
use mfg_core::{residual_p1, stationary_residuals, HorizonSolution64, StationarySolution64};
use serde_json::{json, Value};
use tempfile::TempDir;

fn mfg(dir: &Path, config: &Value, extra: &[&str]) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_mfg"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn result(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/result.json")).unwrap()).unwrap()
}

fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join("out").join(name)
}

fn example1(command: &str) -> Value {
    json!({
        "command": command,
        "instance": {
            "s": 2,
            "horizon": 3,
            "m0": [0.3, 0.7],
            "terminal_cost": [0.0, 1.0],
            "model": {"name": "example1", "params": {"alpha1": 1.0, "alpha2": 1.0, "alpha3": 1.0}}
        }
    })
}

#[test]
fn minimal_config_uses_defaults() {
    let cfg = mfg_cli::parse_config(
        r#"{"command": "solve-stationary", "instance": {"s": 3, "model": {"name": "example2"}}}"#,
    )
    .unwrap();
    assert_eq!(cfg.seed, 0);
    assert_eq!(cfg.horizon_solver.damping, 0.5);
    assert_eq!(cfg.horizon_solver.max_outer_iters, 1000);
    assert_eq!(cfg.horizon_solver.multistart_count, 5);
    assert_eq!(cfg.stationary_solver.outer_tol, 1e-8);
    assert_eq!(cfg.inner.grad_tol, 1e-8);
    assert_eq!(cfg.probes.samples, 200);
    assert!(cfg.output.csv);
    assert_eq!(cfg.m0().unwrap().as_slice(), &[1.0 / 3.0; 3]);
}

#[test]
fn mass_error_names_the_field() {
    let dir = TempDir::new().unwrap();
    let mut cfg = example1("solve-horizon");
    cfg["instance"]["m0"] = json!([0.2, 0.7]);
    let out = mfg(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("instance.m0") && err.contains("0.9"), "{err}");
}

#[test]
fn unknown_model_lists_available() {
    let dir = TempDir::new().unwrap();
    let mut cfg = example1("solve-horizon");
    cfg["instance"]["model"] = json!({"name": "example9"});
    let out = mfg(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for name in [
        "example1",
        "example1-variant",
        "example2",
        "example2-variant",
        "zero",
        "constant",
    ] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn unknown_key_reported_with_path() {
    let dir = TempDir::new().unwrap();
    let mut cfg = example1("solve-horizon");
    cfg["horizon_solver"] = json!({"dampening": 0.3});
    let out = mfg(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(
        err.contains("horizon_solver") && err.contains("dampening"),
        "{err}"
    );
}

#[test]
fn zero_cost_horizon_writes_trajectory() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "command": "solve-horizon",
        "instance": {"s": 2, "horizon": 4, "terminal_cost": [0.0, 1.0], "model": {"name": "zero"}}
    });
    let out = mfg(dir.path(), &cfg, &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_path(out_file(dir.path(), "trajectory.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["time", "state", "m", "U", "P_1_1", "P_1_2", "P_2_1", "P_2_2"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5 * 2);
    let last = &rows[9];
    assert_eq!(&last[0], "4");
    assert!(last.iter().skip(4).all(|c| c.is_empty()));
    let r = result(dir.path());
    assert_eq!(r["status"], "converged");
    assert!(r["iterations"]["outer"].as_u64().unwrap() <= 2);
    assert!(out_file(dir.path(), "metadata.json").exists());
}

#[test]
fn verify_example1_passes() {
    let dir = TempDir::new().unwrap();
    let mut cfg = example1("verify");
    cfg["probes"] = json!({"samples": 40});
    cfg["seed"] = json!(11);
    let out = mfg(dir.path(), &cfg, &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = result(dir.path());
    let probes = r["probes"].as_array().unwrap();
    assert!(!probes.is_empty());
    for p in probes {
        assert_eq!(p["passed"], true, "{p}");
        assert_eq!(p["seed"], 11);
    }
}

#[test]
fn oracle_rejects_four_states() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "command": "oracle",
        "instance": {"s": 4, "model": {"name": "example2-variant"}}
    });
    let out = mfg(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unsupported"), "{}", stderr(&out));
}

#[test]
fn oracle_two_states_agrees() {
    let dir = TempDir::new().unwrap();
    let mut cfg = example1("oracle");
    cfg["grid"] = json!({"resolution": 1e-3});
    let out = mfg(dir.path(), &cfg, &[]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn horizon_result_round_trips() {
    let dir = TempDir::new().unwrap();
    let out = mfg(dir.path(), &example1("solve-horizon"), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = result(dir.path());
    let cfg: RunConfig = serde_json::from_value(r["config"].clone()).unwrap();
    let sol: HorizonSolution64 = serde_json::from_value(r["solution"].clone()).unwrap();
    let inst = cfg.problem_instance().unwrap();
    let (cost, evo) = residual_p1(&sol, &inst, &cfg.horizon_solver).unwrap();
    let recorded_cost = r["residuals"]["cost"].as_f64().unwrap();
    let recorded_evo = r["residuals"]["evolution"].as_f64().unwrap();
    assert!((cost - recorded_cost).abs() <= 1e-12);
    assert!((evo - recorded_evo).abs() <= 1e-12);
    assert!(cost <= 1e-8 && evo <= 1e-8);
}

#[test]
fn stationary_result_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "command": "solve-stationary",
        "instance": {"s": 3, "model": {"name": "example2"}}
    });
    let out = mfg(dir.path(), &cfg, &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = result(dir.path());
    let cfg: RunConfig = serde_json::from_value(r["config"].clone()).unwrap();
    let sol: StationarySolution64 = serde_json::from_value(r["solution"].clone()).unwrap();
    let model = cfg.model().unwrap();
    let (cost, dist) =
        stationary_residuals(&sol, model.as_ref(), &cfg.stationary_solver.inner).unwrap();
    assert!((cost - r["residuals"]["cost"].as_f64().unwrap()).abs() <= 1e-12);
    assert!((dist - r["residuals"]["distribution"].as_f64().unwrap()).abs() <= 1e-12);
    let mut rdr = csv::Reader::from_path(out_file(dir.path(), "stationary.csv")).unwrap();
    assert_eq!(rdr.records().count(), 1);
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let mut cfg = example1("solve-horizon");
    cfg["seed"] = json!(5);
    for dir in [&a, &b] {
        let out = mfg(dir.path(), &cfg, &[]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let ra = fs::read(out_file(a.path(), "result.json")).unwrap();
    let rb = fs::read(out_file(b.path(), "result.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let out = mfg(
        dir.path(),
        &example1("solve-horizon"),
        &["--seed", "42", "--quiet"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    assert_eq!(result(dir.path())["seed"], 42);
}

#[test]
fn convergence_failure_persists_history() {
    let dir = TempDir::new().unwrap();
    let mut cfg = example1("solve-horizon");
    cfg["horizon_solver"] = json!({"max_outer_iters": 1});
    let out = mfg(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let r = result(dir.path());
    assert_eq!(r["status"], "failed");
    assert!(!r["convergence"]["history"].as_array().unwrap().is_empty());
}

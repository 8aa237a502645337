//! Command dispatch and artifact writing.
//!
//! Every command writes `result.json` (deterministic for a given config and
//! seed) and `metadata.json` (wall-clock time and tool version). Solver
//! commands also write a CSV when `output.csv` is set.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mfg_core::horizon::trajectory_distance;
use mfg_core::verify::{grid_oracle_min, run_probes, ProbeSettings};
use mfg_core::{
    solve_p1, solve_p1_multistart, solve_stage, solve_stationary, HorizonSolution64, MfgError,
    StationarySolution64,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, RunConfig};
use crate::error::CliError;

/// Slack allowed between the stage solver and the grid minimum.
pub const ORACLE_TOL: f64 = 1e-4;

pub const RESULT_FILE: &str = "result.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const STATIONARY_FILE: &str = "stationary.csv";

#[derive(Debug, Default)]
pub struct RunSummary {
    /// Human-readable lines for the terminal.
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Runs `cfg` and writes its artifacts under `out_dir`. Failed solves and
/// failed verifications still write `result.json` before returning the error.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary, CliError> {
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut summary = RunSummary::default();
    let outcome = match cfg.command {
        Command::SolveHorizon => solve_horizon(cfg, out_dir, &mut summary),
        Command::SolveStationary => solve_stat(cfg, out_dir, &mut summary),
        Command::Oracle => oracle(cfg, out_dir, &mut summary),
        Command::Verify => verify(cfg, out_dir, &mut summary),
    };
    let meta = json!({
        "tool": "mfg",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.as_str(),
        "unix_time": SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    write_json(&out_dir.join(METADATA_FILE), &meta, &mut summary)?;
    outcome.map(|()| summary)
}

fn write_json(
    path: &Path,
    value: &impl Serialize,
    summary: &mut RunSummary,
) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(io)?;
    summary.files.push(path.to_path_buf());
    Ok(())
}

fn write_csv(
    path: &Path,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    summary: &mut RunSummary,
) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(&header).map_err(|e| io(e.into()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)?;
    summary.files.push(path.to_path_buf());
    Ok(())
}

fn envelope(cfg: &RunConfig, status: &str) -> serde_json::Map<String, Value> {
    let mut map = serde_json::Map::new();
    map.insert("command".into(), json!(cfg.command.as_str()));
    map.insert("status".into(), json!(status));
    map.insert("seed".into(), json!(cfg.seed));
    map.insert(
        "config".into(),
        serde_json::to_value(cfg).expect("config serializes"),
    );
    map
}

/// Writes a failure result (with residual history when there is one) and
/// converts the error.
fn fail(cfg: &RunConfig, out_dir: &Path, err: MfgError, summary: &mut RunSummary) -> CliError {
    let mut map = envelope(cfg, "failed");
    map.insert("error".into(), json!(err.to_string()));
    if let MfgError::Convergence {
        solver,
        iterations,
        residual,
        history,
        best,
    } = err.root()
    {
        map.insert(
            "convergence".into(),
            json!({
                "solver": solver,
                "iterations": iterations,
                "residual": residual,
                "history": history,
                "best": best,
            }),
        );
    }
    if let Err(io) = write_json(&out_dir.join(RESULT_FILE), &map, summary) {
        return io;
    }
    err.into()
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn solve_horizon(
    cfg: &RunConfig,
    out_dir: &Path,
    summary: &mut RunSummary,
) -> Result<(), CliError> {
    let inst = cfg.problem_instance()?;
    let hcfg = &cfg.horizon_solver;
    let sol = match solve_p1(&inst, hcfg) {
        Ok(sol) => sol,
        Err(e) => return Err(fail(cfg, out_dir, e, summary)),
    };
    let mut map = envelope(cfg, "converged");
    map.insert(
        "solution".into(),
        serde_json::to_value(&sol).expect("solution serializes"),
    );
    map.insert(
        "residuals".into(),
        json!({
            "fixed_point": sol.fixed_point_residual,
            "cost": sol.cost_residual,
            "evolution": sol.evolution_residual,
        }),
    );
    map.insert(
        "iterations".into(),
        json!({ "outer": sol.outer_iterations }),
    );
    if hcfg.multistart_count > 0 {
        let runs = match solve_p1_multistart(&inst, hcfg, cfg.seed) {
            Ok(r) => r,
            Err(e) => return Err(fail(cfg, out_dir, e, summary)),
        };
        let spread = runs
            .iter()
            .map(|r| trajectory_distance(r, &sol))
            .fold(0.0, f64::max);
        map.insert(
            "multistart".into(),
            json!({ "count": runs.len(), "max_distance": spread }),
        );
        summary.lines.push(format!(
            "multistart: {} runs, max trajectory distance {spread:e}",
            runs.len()
        ));
    }
    summary.lines.insert(
        0,
        format!(
            "solve-horizon: converged in {} outer iterations (fixed-point residual {:e}, re-check {:e} / {:e})",
            sol.outer_iterations, sol.fixed_point_residual, sol.cost_residual, sol.evolution_residual
        ),
    );
    write_json(&out_dir.join(RESULT_FILE), &map, summary)?;
    if cfg.output.csv {
        write_trajectory(&out_dir.join(TRAJECTORY_FILE), &sol, summary)?;
    }
    Ok(())
}

/// One row per `(time, state)`; the strategy columns hold the full matrix
/// used for the transition out of `time`, and are empty at the final time.
pub fn write_trajectory(
    path: &Path,
    sol: &HorizonSolution64,
    summary: &mut RunSummary,
) -> Result<(), CliError> {
    let s = sol.distributions[0].len();
    let mut header: Vec<String> = ["time", "state", "m", "U"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    for i in 1..=s {
        for j in 1..=s {
            header.push(format!("P_{i}_{j}"));
        }
    }
    let mut rows = Vec::new();
    for (n, (m, u)) in sol.distributions.iter().zip(&sol.costs).enumerate() {
        for i in 0..s {
            let mut row = vec![n.to_string(), (i + 1).to_string(), num(m[i]), num(u[i])];
            match sol.strategies.get(n) {
                Some(p) => row.extend(p.as_matrix().as_flat().iter().map(|&x| num(x))),
                None => row.extend(std::iter::repeat_n(String::new(), s * s)),
            }
            rows.push(row);
        }
    }
    write_csv(path, header, rows, summary)
}

fn solve_stat(cfg: &RunConfig, out_dir: &Path, summary: &mut RunSummary) -> Result<(), CliError> {
    let model = cfg.model()?;
    let guess = cfg.m0()?;
    let sol = match solve_stationary(model.as_ref(), &cfg.stationary_solver, &guess) {
        Ok(sol) => sol,
        Err(e) => return Err(fail(cfg, out_dir, e, summary)),
    };
    let mut map = envelope(cfg, "converged");
    map.insert(
        "solution".into(),
        serde_json::to_value(&sol).expect("solution serializes"),
    );
    map.insert(
        "residuals".into(),
        json!({
            "cost": sol.cost_residual,
            "distribution": sol.distribution_residual,
            "critical_value_gap": (sol.critical_value - sol.lambda).abs(),
        }),
    );
    map.insert(
        "iterations".into(),
        json!({ "outer": sol.outer_iterations }),
    );
    summary.lines.push(format!(
        "solve-stationary: converged in {} outer iterations, lambda = {} (residuals {:e} / {:e})",
        sol.outer_iterations, sol.lambda, sol.cost_residual, sol.distribution_residual
    ));
    write_json(&out_dir.join(RESULT_FILE), &map, summary)?;
    if cfg.output.csv {
        write_stationary(&out_dir.join(STATIONARY_FILE), &sol, summary)?;
    }
    Ok(())
}

pub fn write_stationary(
    path: &Path,
    sol: &StationarySolution64,
    summary: &mut RunSummary,
) -> Result<(), CliError> {
    let s = sol.distribution.len();
    let mut header: Vec<String> = (1..=s).map(|i| format!("m_{i}")).collect();
    header.extend((1..=s).map(|i| format!("U_{i}")));
    header.push("lambda".into());
    let mut row: Vec<String> = sol
        .distribution
        .as_slice()
        .iter()
        .map(|&x| num(x))
        .collect();
    row.extend(sol.costs.as_slice().iter().map(|&x| num(x)));
    row.push(num(sol.lambda));
    write_csv(path, header, vec![row], summary)
}

fn oracle(cfg: &RunConfig, out_dir: &Path, summary: &mut RunSummary) -> Result<(), CliError> {
    let model = cfg.model()?;
    let m = cfg.m0()?;
    let u = cfg.terminal_cost()?;
    let (grid_p, grid_v) = grid_oracle_min(&m, &u, model.as_ref(), &cfg.grid)?;
    let sol = solve_stage(&m, &u, model.as_ref(), &cfg.inner)?;
    let gap = sol.objective - grid_v;
    let passed = gap <= ORACLE_TOL;
    let mut map = envelope(cfg, if passed { "passed" } else { "failed" });
    map.insert(
        "grid".into(),
        json!({ "strategy": grid_p, "objective": grid_v }),
    );
    map.insert(
        "solver".into(),
        json!({ "strategy": sol.strategy, "objective": sol.objective, "kkt": sol.kkt }),
    );
    map.insert("gap".into(), json!(gap));
    map.insert("tolerance".into(), json!(ORACLE_TOL));
    summary.lines.push(format!(
        "oracle: grid minimum {grid_v}, solver {}, gap {gap:e} ({})",
        sol.objective,
        if passed { "pass" } else { "FAIL" }
    ));
    write_json(&out_dir.join(RESULT_FILE), &map, summary)?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "solver objective exceeds grid minimum by {gap:e}"
        )))
    }
}

fn verify(cfg: &RunConfig, out_dir: &Path, summary: &mut RunSummary) -> Result<(), CliError> {
    let model = cfg.model()?;
    let settings = ProbeSettings {
        seed: cfg.seed,
        ..cfg.probes
    };
    let reports = run_probes(model.as_ref(), cfg.instance.s, &settings, &cfg.inner)?;
    let passed = reports.iter().all(|r| r.passed);
    for r in &reports {
        let bound = match r.threshold {
            Some(t) => format!("threshold {t:e}"),
            None => "finite".into(),
        };
        summary.lines.push(format!(
            "{} {}: observed {:e} ({bound}, {} samples)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.observed,
            r.samples
        ));
    }
    let mut map = envelope(cfg, if passed { "passed" } else { "failed" });
    map.insert(
        "probes".into(),
        serde_json::to_value(&reports).expect("reports serialize"),
    );
    map.insert("passed".into(), json!(passed));
    write_json(&out_dir.join(RESULT_FILE), &map, summary)?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = reports
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.as_str())
            .collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}

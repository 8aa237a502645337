//! Run configuration: a strict JSON document, checked field by field.

use std::path::PathBuf;

use mfg_core::verify::ProbeSettings;
use mfg_core::{
    CostVector64, Distribution64, GridOracleConfig64, HorizonSolverConfig64, InnerSolverConfig64,
    ModelSpec, ProblemInstance64, SharedModel64, StationaryConfig64,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Allowed drift of `m0` from unit mass.
const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveHorizon,
    SolveStationary,
    Oracle,
    Verify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::SolveHorizon => "solve-horizon",
            Command::SolveStationary => "solve-stationary",
            Command::Oracle => "oracle",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    /// Number of states.
    pub s: usize,
    /// Number of steps `N`; required by `solve-horizon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Initial distribution (uniform if omitted). Also the stationary guess
    /// and the oracle's distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<Vec<f64>>,
    /// Terminal cost (zero if omitted). Also the oracle's next-step cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_cost: Option<Vec<f64>>,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory; `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write the CSV companions of `result.json`.
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub instance: InstanceConfig,
    #[serde(default)]
    pub horizon_solver: HorizonSolverConfig64,
    #[serde(default)]
    pub stationary_solver: StationaryConfig64,
    /// Stage solver settings for `oracle` and `verify`.
    #[serde(default)]
    pub inner: InnerSolverConfig64,
    #[serde(default)]
    pub grid: GridOracleConfig64,
    /// Probe settings for `verify`; the probe seed is always `seed`.
    #[serde(default)]
    pub probes: ProbeSettings,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Parses and validates a JSON config. Errors carry the offending key path.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn field_err(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let inst = &self.instance;
        if inst.s < 2 {
            return Err(field_err("instance.s", "need at least 2 states"));
        }
        self.model_spec()?;
        if let Some(m0) = &inst.m0 {
            if m0.len() != inst.s {
                return Err(field_err(
                    "instance.m0",
                    format!("has {} entries, expected {}", m0.len(), inst.s),
                ));
            }
            if m0.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(field_err(
                    "instance.m0",
                    "entries must be finite and non-negative",
                ));
            }
            let total: f64 = m0.iter().sum();
            if (total - 1.0).abs() > MASS_TOL {
                let shown = format!("{total:.12}");
                let shown = shown.trim_end_matches('0').trim_end_matches('.');
                return Err(field_err(
                    "instance.m0",
                    format!("entries sum to {shown}, expected 1"),
                ));
            }
        }
        if let Some(g) = &inst.terminal_cost {
            if g.len() != inst.s {
                return Err(field_err(
                    "instance.terminal_cost",
                    format!("has {} entries, expected {}", g.len(), inst.s),
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(field_err(
                    "instance.terminal_cost",
                    "entries must be finite",
                ));
            }
        }
        match (self.command, inst.horizon) {
            (Command::SolveHorizon, None) => {
                return Err(field_err("instance.horizon", "required by solve-horizon"))
            }
            (_, Some(0)) => return Err(field_err("instance.horizon", "must be at least 1")),
            _ => {}
        }
        self.horizon_solver
            .validate()
            .map_err(|e| field_err("horizon_solver", e))?;
        self.stationary_solver
            .validate()
            .map_err(|e| field_err("stationary_solver", e))?;
        self.inner.validate().map_err(|e| field_err("inner", e))?;
        if self.probes.samples == 0 {
            return Err(field_err("probes.samples", "must be positive"));
        }
        if !(self.probes.floor >= 0.0 && self.probes.floor * (inst.s as f64) < 1.0) {
            return Err(field_err("probes.floor", "must lie in [0, 1/s)"));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let model = &self.instance.model;
        if !ModelSpec::NAMES.contains(&model.name.as_str()) {
            return Err(field_err(
                "instance.model.name",
                format!(
                    "unknown model `{}`; available models: {}",
                    model.name,
                    ModelSpec::NAMES.join(", ")
                ),
            ));
        }
        let mut tagged = serde_json::Map::new();
        tagged.insert("name".into(), Value::String(model.name.clone()));
        if !model.params.is_null() {
            tagged.insert("params".into(), model.params.clone());
        }
        let spec: ModelSpec = serde_path_to_error::deserialize(Value::Object(tagged))
            .map_err(|e| field_err("instance.model.params", e.into_inner()))?;
        spec.build::<f64>()
            .map_err(|e| field_err("instance.model.params", e))?;
        Ok(spec)
    }

    pub fn model(&self) -> Result<SharedModel64, CliError> {
        self.model_spec()?
            .build()
            .map_err(|e| field_err("instance.model.params", e))
    }

    pub fn m0(&self) -> Result<Distribution64, CliError> {
        let r = match &self.instance.m0 {
            Some(v) => Distribution64::new(v.clone()),
            None => Distribution64::uniform(self.instance.s),
        };
        r.map_err(|e| field_err("instance.m0", e))
    }

    pub fn terminal_cost(&self) -> Result<CostVector64, CliError> {
        match &self.instance.terminal_cost {
            Some(v) => {
                CostVector64::new(v.clone()).map_err(|e| field_err("instance.terminal_cost", e))
            }
            None => Ok(CostVector64::zeros(self.instance.s)),
        }
    }

    pub fn problem_instance(&self) -> Result<ProblemInstance64, CliError> {
        let horizon = self
            .instance
            .horizon
            .ok_or_else(|| field_err("instance.horizon", "missing"))?;
        ProblemInstance64::new(horizon, self.m0()?, self.terminal_cost()?, self.model()?)
            .map_err(|e| field_err("instance", e))
    }
}

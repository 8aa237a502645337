//! Stationary solutions `(m, U, lambda)` with `U + lambda = Gamma_m(U)` and
//! `m = m P` for the optimal `P` at `(m, U)`.
//!
//! Costs live in the quotient of `R^s` by constants. Stored solutions use the
//! representative with `U_1 = 0`; comparisons between solutions should go
//! through [`quotient_norm`].

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{MfgError, Result};
use crate::ops::{individual_costs, push_forward, stage_objective};
use crate::scalar::Scalar;
use crate::simplex::{solve_stage, solve_stage_from, InnerSolverConfig};
use crate::types::{CostVector, Distribution, StrategyMatrix};

/// Entries of `m` below this are floored during the outer iteration.
const INTERIOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct StationaryConfig<S> {
    pub damping_m: S,
    pub rvi_tol: S,
    pub outer_tol: S,
    pub max_outer: usize,
    pub max_rvi: usize,
    pub inner: InnerSolverConfig<S>,
}

impl<S: Scalar> Default for StationaryConfig<S> {
    fn default() -> Self {
        Self {
            damping_m: S::lit(0.5),
            rvi_tol: S::lit(1e-10),
            outer_tol: S::lit(1e-8),
            max_outer: 2000,
            max_rvi: 10_000,
            inner: InnerSolverConfig {
                grad_tol: S::lit(1e-12),
                ..InnerSolverConfig::default()
            },
        }
    }
}

impl<S: Scalar> StationaryConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping_m > S::zero() && self.damping_m <= S::one()) {
            return Err(MfgError::invalid("damping_m must lie in (0, 1]"));
        }
        if !(self.rvi_tol > S::zero()) || !(self.outer_tol > S::zero()) {
            return Err(MfgError::invalid("tolerances must be positive"));
        }
        if self.max_outer == 0 || self.max_rvi == 0 {
            return Err(MfgError::invalid("iteration caps must be positive"));
        }
        self.inner.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RviOutcome<S> {
    /// Normalized so that the first entry is zero.
    pub costs: CostVector<S>,
    pub lambda: S,
    /// Optimal strategy at `(m, costs)`.
    pub strategy: StrategyMatrix<S>,
    /// `||Gamma_m(U) - U - lambda||_inf`
    pub residual: S,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct StationarySolution<S> {
    pub distribution: Distribution<S>,
    /// Normalized so that the first entry is zero.
    pub costs: CostVector<S>,
    pub lambda: S,
    pub strategy: StrategyMatrix<S>,
    /// `||Gamma_m(U) - U - lambda||_inf`, as computed by [`stationary_residuals`].
    pub cost_residual: S,
    /// `||m P - m||_inf`, as computed by [`stationary_residuals`].
    pub distribution_residual: S,
    pub critical_value: S,
    pub outer_iterations: usize,
}

fn require_interior<S: Scalar>(m: &Distribution<S>) -> Result<()> {
    if !(m.min_entry() > S::zero()) {
        return Err(MfgError::invalid("distribution must be strictly positive"));
    }
    Ok(())
}

fn span_residual<S: Scalar>(gamma: &CostVector<S>, u: &CostVector<S>, lambda: S) -> S {
    gamma
        .as_slice()
        .iter()
        .zip(u.as_slice())
        .fold(S::zero(), |acc, (&g, &x)| acc.max((g - x - lambda).abs()))
}

/// Solves `U + lambda = Gamma_m(U)` for fixed `m` by relative value
/// iteration: `U <- Gamma_m(U) - Gamma_m(U)_1`, `lambda <- Gamma_m(U)_1`.
pub fn relative_value_iteration<S: Scalar>(
    m: &Distribution<S>,
    u0: &CostVector<S>,
    model: &dyn CostModel<S>,
    cfg: &StationaryConfig<S>,
) -> Result<RviOutcome<S>> {
    cfg.validate()?;
    require_interior(m)?;
    if u0.len() != m.len() {
        return Err(MfgError::invalid(
            "relative_value_iteration: dimension mismatch",
        ));
    }
    rvi_warm(m, u0, model, cfg, None)
}

fn rvi_warm<S: Scalar>(
    m: &Distribution<S>,
    u0: &CostVector<S>,
    model: &dyn CostModel<S>,
    cfg: &StationaryConfig<S>,
    warm: Option<&StrategyMatrix<S>>,
) -> Result<RviOutcome<S>> {
    let mut u = u0.normalized_first();
    let mut start = match warm {
        Some(p) => p.clone(),
        None => StrategyMatrix::uniform(m.len())?,
    };
    let mut history = Vec::new();
    for iter in 1..=cfg.max_rvi {
        let sol = solve_stage_from(m, &u, model, &cfg.inner, &start)?;
        let gamma = individual_costs(m, &sol.strategy, &u, model)?;
        let lambda = gamma[0];
        let residual = span_residual(&gamma, &u, lambda);
        history.push(residual.to_f64_lossy());
        if residual <= cfg.rvi_tol {
            return Ok(RviOutcome {
                costs: u,
                lambda,
                strategy: sol.strategy,
                residual,
                iterations: iter,
            });
        }
        u = gamma.normalized_first();
        start = sol.strategy;
    }
    Err(MfgError::Convergence {
        solver: "relative value iteration",
        iterations: cfg.max_rvi,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
        best: Some(u.as_slice().iter().map(|x| x.to_f64_lossy()).collect()),
    })
}

/// `sum_ij c_ij(m, P) m_i P_ij`: the running cost of `P` under `m`.
pub fn critical_value<S: Scalar>(
    m: &Distribution<S>,
    p: &StrategyMatrix<S>,
    model: &dyn CostModel<S>,
) -> Result<S> {
    if p.dim() != m.len() {
        return Err(MfgError::invalid("critical_value: dimension mismatch"));
    }
    let zeros = vec![S::zero(); m.len()];
    stage_objective(m.as_slice(), p.as_matrix(), &zeros, model)
}

/// Euclidean norm modulo constants: `||U - mean(U)||_2`.
pub fn quotient_norm<S: Scalar>(u: &CostVector<S>) -> S {
    let v = u.as_slice();
    let mean = v.iter().copied().sum::<S>() / S::lit(v.len() as f64);
    v.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>().sqrt()
}

/// Re-solves the stage problem from scratch at `(m, U)` and returns
/// `(||Gamma_m(U) - U - lambda||_inf, ||m P - m||_inf)`.
pub fn stationary_residuals<S: Scalar>(
    solution: &StationarySolution<S>,
    model: &dyn CostModel<S>,
    inner: &InnerSolverConfig<S>,
) -> Result<(S, S)> {
    let m = &solution.distribution;
    let u = &solution.costs;
    let sol = solve_stage(m, u, model, inner)?;
    let gamma = individual_costs(m, &sol.strategy, u, model)?;
    let pushed = push_forward(m, &sol.strategy)?;
    Ok((
        span_residual(&gamma, u, solution.lambda),
        pushed.max_abs_diff(m),
    ))
}

fn floor_interior<S: Scalar>(m: Distribution<S>) -> Result<Distribution<S>> {
    let floor = S::lit(INTERIOR_FLOOR);
    if m.min_entry() >= floor {
        return Ok(m);
    }
    log::warn!(
        "distribution entry {} fell below {INTERIOR_FLOOR:e}; flooring",
        m.min_entry()
    );
    let raised: Vec<S> = m.as_slice().iter().map(|&x| x.max(floor)).collect();
    let total: S = raised.iter().copied().sum();
    Distribution::new(raised.into_iter().map(|x| x / total).collect())
}

/// Finds a stationary solution by alternating relative value iteration at
/// the current distribution with a damped update `m <- (1 - theta) m + theta m P`.
pub fn solve_stationary<S: Scalar>(
    model: &dyn CostModel<S>,
    cfg: &StationaryConfig<S>,
    m0_guess: &Distribution<S>,
) -> Result<StationarySolution<S>> {
    cfg.validate()?;
    require_interior(m0_guess)?;
    let s = m0_guess.len();
    let mut m = m0_guess.clone();
    let mut u = CostVector::zeros(s);
    let mut warm: Option<StrategyMatrix<S>> = None;
    let mut history = Vec::new();
    for outer in 1..=cfg.max_outer {
        let rvi = rvi_warm(&m, &u, model, cfg, warm.as_ref())?;
        let pushed = push_forward(&m, &rvi.strategy)?;
        let dist_res = pushed.max_abs_diff(&m);
        history.push(dist_res.max(rvi.residual).to_f64_lossy());

        if dist_res <= cfg.outer_tol && rvi.residual <= cfg.outer_tol {
            let cv = critical_value(&m, &rvi.strategy, model)?;
            let mut candidate = StationarySolution {
                distribution: m.clone(),
                costs: rvi.costs.clone(),
                lambda: rvi.lambda,
                strategy: rvi.strategy.clone(),
                cost_residual: S::zero(),
                distribution_residual: S::zero(),
                critical_value: cv,
                outer_iterations: outer,
            };
            let (cost_res, dist_res) = stationary_residuals(&candidate, model, &cfg.inner)?;
            candidate.cost_residual = cost_res;
            candidate.distribution_residual = dist_res;
            let gap = (cv - rvi.lambda).abs();
            if cost_res <= cfg.outer_tol && dist_res <= cfg.outer_tol && gap <= cfg.outer_tol {
                return Ok(candidate);
            }
            log::debug!(
                "outer step {outer}: re-solve residuals ({:e}, {:e}), critical value gap {:e}; continuing",
                cost_res.to_f64_lossy(),
                dist_res.to_f64_lossy(),
                gap.to_f64_lossy()
            );
        }

        m = floor_interior(m.blend(&pushed, cfg.damping_m)?)?;
        u = rvi.costs;
        warm = Some(rvi.strategy);
    }
    Err(MfgError::Convergence {
        solver: "stationary outer iteration",
        iterations: cfg.max_outer,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
        best: Some(m.as_slice().iter().map(|x| x.to_f64_lossy()).collect()),
    })
}

//! Finite-horizon problem with fixed initial distribution and terminal cost.
//!
//! Given a guess for the whole distribution sequence, a backward pass solves
//! every stage problem from the terminal cost down to time 0, and a forward
//! pass pushes the initial distribution through the resulting strategies.
//! A solution is a fixed point of that map; we look for it by damped Picard
//! iteration. Existence of a fixed point is guaranteed for continuous stage
//! solutions, convergence of the iteration is not, so running out of outer
//! iterations is reported as an ordinary error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::SharedModel;
use crate::error::{MfgError, Result};
use crate::ops::{individual_costs, push_forward};
use crate::rng;
use crate::scalar::Scalar;
use crate::simplex::{solve_stage, solve_stage_from, InnerSolverConfig};
use crate::types::{CostVector, Distribution, StrategyMatrix};

#[derive(Debug, Clone)]
pub struct ProblemInstance<S> {
    s: usize,
    horizon: usize,
    m0: Distribution<S>,
    terminal_cost: CostVector<S>,
    model: SharedModel<S>,
}

impl<S: Scalar> ProblemInstance<S> {
    pub fn new(
        horizon: usize,
        m0: Distribution<S>,
        terminal_cost: CostVector<S>,
        model: SharedModel<S>,
    ) -> Result<Self> {
        let s = m0.len();
        if horizon == 0 {
            return Err(MfgError::invalid("horizon must be at least 1"));
        }
        if terminal_cost.len() != s {
            return Err(MfgError::invalid(format!(
                "terminal cost has {} entries, m0 has {s}",
                terminal_cost.len()
            )));
        }
        Ok(Self {
            s,
            horizon,
            m0,
            terminal_cost,
            model,
        })
    }

    pub fn states(&self) -> usize {
        self.s
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn m0(&self) -> &Distribution<S> {
        &self.m0
    }

    pub fn terminal_cost(&self) -> &CostVector<S> {
        &self.terminal_cost
    }

    pub fn model(&self) -> &SharedModel<S> {
        &self.model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct HorizonSolverConfig<S> {
    /// Weight of the new sequence in `m <- (1 - theta) m + theta T(m)`.
    pub damping: S,
    pub max_outer_iters: usize,
    pub fp_tol: S,
    pub inner: InnerSolverConfig<S>,
    pub multistart_count: usize,
}

impl<S: Scalar> Default for HorizonSolverConfig<S> {
    fn default() -> Self {
        Self {
            damping: S::lit(0.5),
            max_outer_iters: 1000,
            fp_tol: S::lit(1e-8),
            // stage solutions must be well inside fp_tol for the re-check to pass
            inner: InnerSolverConfig {
                grad_tol: S::lit(1e-12),
                ..InnerSolverConfig::default()
            },
            multistart_count: 5,
        }
    }
}

impl<S: Scalar> HorizonSolverConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > S::zero() && self.damping <= S::one()) {
            return Err(MfgError::invalid("damping must lie in (0, 1]"));
        }
        if !(self.fp_tol > S::zero()) {
            return Err(MfgError::invalid("fp_tol must be positive"));
        }
        if self.max_outer_iters == 0 {
            return Err(MfgError::invalid("max_outer_iters must be positive"));
        }
        self.inner.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct HorizonSolution<S> {
    /// `m^0 .. m^N`
    pub distributions: Vec<Distribution<S>>,
    /// `U^0 .. U^N`, with `U^N` the terminal cost.
    pub costs: Vec<CostVector<S>>,
    /// `P^0 .. P^{N-1}`
    pub strategies: Vec<StrategyMatrix<S>>,
    /// `max_n ||T(m)^n - m^n||_inf` at the returned distributions.
    pub fixed_point_residual: S,
    pub outer_iterations: usize,
    /// Re-solved cost recursion violation, as computed by [`residual_p1`].
    pub cost_residual: S,
    /// Re-solved distribution evolution violation, as computed by [`residual_p1`].
    pub evolution_residual: S,
}

fn check_sequence<S: Scalar>(
    m_seq: &[Distribution<S>],
    instance: &ProblemInstance<S>,
) -> Result<()> {
    if m_seq.len() != instance.horizon + 1 {
        return Err(MfgError::invalid(format!(
            "distribution sequence has {} entries, expected {}",
            m_seq.len(),
            instance.horizon + 1
        )));
    }
    if m_seq.iter().any(|m| m.len() != instance.s) {
        return Err(MfgError::invalid(
            "distribution sequence: dimension mismatch",
        ));
    }
    if m_seq[0].max_abs_diff(&instance.m0) > S::simplex_tol() {
        return Err(MfgError::invalid("distribution sequence must start at m0"));
    }
    Ok(())
}

/// Backward cost recursion for a fixed distribution sequence: returns
/// `U^0..U^N` and the optimal strategies `P^0..P^{N-1}`.
pub fn backward_pass<S: Scalar>(
    m_seq: &[Distribution<S>],
    instance: &ProblemInstance<S>,
    inner: &InnerSolverConfig<S>,
) -> Result<(Vec<CostVector<S>>, Vec<StrategyMatrix<S>>)> {
    check_sequence(m_seq, instance)?;
    backward_warm(m_seq, instance, inner, None)
}

fn backward_warm<S: Scalar>(
    m_seq: &[Distribution<S>],
    instance: &ProblemInstance<S>,
    inner: &InnerSolverConfig<S>,
    warm: Option<&[StrategyMatrix<S>]>,
) -> Result<(Vec<CostVector<S>>, Vec<StrategyMatrix<S>>)> {
    let n_steps = instance.horizon;
    let model = instance.model.as_ref();
    let mut costs = vec![instance.terminal_cost.clone(); n_steps + 1];
    let mut strategies: Vec<Option<StrategyMatrix<S>>> = vec![None; n_steps];
    for n in (0..n_steps).rev() {
        let sol = match warm {
            Some(w) => solve_stage_from(&m_seq[n], &costs[n + 1], model, inner, &w[n]),
            None => solve_stage(&m_seq[n], &costs[n + 1], model, inner),
        }
        .map_err(|e| e.at_step(n))?;
        costs[n] = individual_costs(&m_seq[n], &sol.strategy, &costs[n + 1], model)
            .map_err(|e| e.at_step(n))?;
        strategies[n] = Some(sol.strategy);
    }
    Ok((
        costs,
        strategies.into_iter().map(|p| p.expect("filled")).collect(),
    ))
}

/// `m^0 = m0`, `m^{n+1} = m^n P^n`.
pub fn forward_pass<S: Scalar>(
    strategies: &[StrategyMatrix<S>],
    instance: &ProblemInstance<S>,
) -> Result<Vec<Distribution<S>>> {
    if strategies.len() != instance.horizon {
        return Err(MfgError::invalid(format!(
            "expected {} strategies, got {}",
            instance.horizon,
            strategies.len()
        )));
    }
    let mut out = Vec::with_capacity(strategies.len() + 1);
    out.push(instance.m0.clone());
    for p in strategies {
        let next = push_forward(out.last().expect("non-empty"), p)?;
        out.push(next);
    }
    Ok(out)
}

/// Costs recomputed along `distributions` with the strategies held fixed.
fn costs_along<S: Scalar>(
    distributions: &[Distribution<S>],
    strategies: &[StrategyMatrix<S>],
    instance: &ProblemInstance<S>,
) -> Result<Vec<CostVector<S>>> {
    let n_steps = instance.horizon;
    let mut costs = vec![instance.terminal_cost.clone(); n_steps + 1];
    for n in (0..n_steps).rev() {
        costs[n] = individual_costs(
            &distributions[n],
            &strategies[n],
            &costs[n + 1],
            instance.model.as_ref(),
        )?;
    }
    Ok(costs)
}

fn seq_distance<S: Scalar>(a: &[Distribution<S>], b: &[Distribution<S>]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (x, y)| acc.max(x.max_abs_diff(y)))
}

/// Accepts `candidate` (with the strategies that produced it) if it is a
/// fixed point within `fp_tol` and passes the independent re-check.
fn try_accept<S: Scalar>(
    instance: &ProblemInstance<S>,
    cfg: &HorizonSolverConfig<S>,
    candidate: &[Distribution<S>],
    strategies: &[StrategyMatrix<S>],
    iter: usize,
) -> Result<Option<HorizonSolution<S>>> {
    let (_, image_strategies) = backward_warm(candidate, instance, &cfg.inner, Some(strategies))?;
    let fp = seq_distance(candidate, &forward_pass(&image_strategies, instance)?);
    if fp > cfg.fp_tol {
        return Ok(None);
    }
    let mut sol = HorizonSolution {
        distributions: candidate.to_vec(),
        costs: costs_along(candidate, strategies, instance)?,
        strategies: strategies.to_vec(),
        fixed_point_residual: fp,
        outer_iterations: iter,
        cost_residual: S::zero(),
        evolution_residual: S::zero(),
    };
    let (cost_res, evo_res) = residual_p1(&sol, instance, cfg)?;
    sol.cost_residual = cost_res;
    sol.evolution_residual = evo_res;
    if cost_res <= cfg.fp_tol && evo_res <= cfg.fp_tol {
        return Ok(Some(sol));
    }
    log::debug!(
        "outer step {iter}: fixed point residual {:e} but re-solve residuals ({:e}, {:e}); continuing",
        fp.to_f64_lossy(),
        cost_res.to_f64_lossy(),
        evo_res.to_f64_lossy()
    );
    Ok(None)
}

/// Solves the finite-horizon problem from the constant sequence at `m0`.
pub fn solve_p1<S: Scalar>(
    instance: &ProblemInstance<S>,
    cfg: &HorizonSolverConfig<S>,
) -> Result<HorizonSolution<S>> {
    let init = vec![instance.m0.clone(); instance.horizon + 1];
    solve_p1_from(instance, cfg, init)
}

/// Solves the finite-horizon problem from the given distribution sequence.
/// The first entry of `init` is replaced by `m0`.
pub fn solve_p1_from<S: Scalar>(
    instance: &ProblemInstance<S>,
    cfg: &HorizonSolverConfig<S>,
    mut init: Vec<Distribution<S>>,
) -> Result<HorizonSolution<S>> {
    cfg.validate()?;
    if let Some(first) = init.first_mut() {
        *first = instance.m0.clone();
    }
    check_sequence(&init, instance)?;

    let mut m_seq = init;
    let mut warm: Option<Vec<StrategyMatrix<S>>> = None;
    let mut prev_image: Option<Vec<Distribution<S>>> = None;
    let mut history = Vec::new();
    for iter in 1..=cfg.max_outer_iters {
        let (_, strategies) = backward_warm(&m_seq, instance, &cfg.inner, warm.as_deref())?;
        let image = forward_pass(&strategies, instance)?;
        let residual = seq_distance(&m_seq, &image);
        history.push(residual.to_f64_lossy());

        // Damping slows the iterate, not the image: once the image stops
        // moving it is the better fixed-point candidate.
        let stalled = prev_image
            .as_ref()
            .is_some_and(|prev| seq_distance(prev, &image) <= cfg.fp_tol);
        if residual <= cfg.fp_tol || stalled {
            if let Some(sol) = try_accept(instance, cfg, &image, &strategies, iter)? {
                return Ok(sol);
            }
        }

        m_seq = m_seq
            .iter()
            .zip(&image)
            .map(|(a, b)| a.blend(b, cfg.damping))
            .collect::<Result<_>>()?;
        m_seq[0] = instance.m0.clone();
        warm = Some(strategies);
        prev_image = Some(image);
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    Err(MfgError::Convergence {
        solver: "horizon fixed-point iteration",
        iterations: cfg.max_outer_iters,
        residual: last,
        history,
        best: None,
    })
}

/// Runs `cfg.multistart_count` solves from independent uniform random
/// distribution sequences (in parallel) and returns every solution.
pub fn solve_p1_multistart<S: Scalar>(
    instance: &ProblemInstance<S>,
    cfg: &HorizonSolverConfig<S>,
    seed: u64,
) -> Result<Vec<HorizonSolution<S>>> {
    let mut draws = rng::seeded(seed);
    let starts: Vec<Vec<Distribution<S>>> = (0..cfg.multistart_count)
        .map(|_| {
            (0..=instance.horizon)
                .map(|_| rng::random_distribution(&mut draws, instance.s, 0.0))
                .collect()
        })
        .collect();
    starts
        .into_par_iter()
        .map(|init| solve_p1_from(instance, cfg, init))
        .collect()
}

/// Largest per-entry difference between two trajectories (distributions and
/// costs).
pub fn trajectory_distance<S: Scalar>(a: &HorizonSolution<S>, b: &HorizonSolution<S>) -> S {
    let dm = a
        .distributions
        .iter()
        .zip(&b.distributions)
        .fold(S::zero(), |acc, (x, y)| acc.max(x.max_abs_diff(y)));
    let du = a
        .costs
        .iter()
        .zip(&b.costs)
        .fold(S::zero(), |acc, (x, y)| acc.max(x.max_abs_diff(y)));
    dm.max(du)
}

/// Independent re-check of a claimed solution: re-solves every stage problem
/// from scratch at the recorded `(m^n, U^{n+1})` and returns the largest
/// violation of the cost recursion and of the distribution evolution.
pub fn residual_p1<S: Scalar>(
    solution: &HorizonSolution<S>,
    instance: &ProblemInstance<S>,
    cfg: &HorizonSolverConfig<S>,
) -> Result<(S, S)> {
    let n_steps = instance.horizon;
    if solution.distributions.len() != n_steps + 1 || solution.costs.len() != n_steps + 1 {
        return Err(MfgError::invalid(
            "solution length does not match the horizon",
        ));
    }
    let model = instance.model.as_ref();
    let mut cost_res = solution.costs[n_steps].max_abs_diff(&instance.terminal_cost);
    let mut evo_res = solution.distributions[0].max_abs_diff(&instance.m0);
    for n in 0..n_steps {
        let m = &solution.distributions[n];
        let u_next = &solution.costs[n + 1];
        let sol = solve_stage(m, u_next, model, &cfg.inner).map_err(|e| e.at_step(n))?;
        let gamma = individual_costs(m, &sol.strategy, u_next, model)?;
        cost_res = cost_res.max(gamma.max_abs_diff(&solution.costs[n]));
        let pushed = push_forward(m, &sol.strategy)?;
        evo_res = evo_res.max(pushed.max_abs_diff(&solution.distributions[n + 1]));
    }
    Ok((cost_res, evo_res))
}

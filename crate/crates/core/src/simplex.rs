//! Single-stage social-cost minimization over row-stochastic matrices.
//!
//! The stage objective is convex in `P` for the models shipped here, so a
//! first-order method is enough: projected gradient with Armijo backtracking
//! along the projection arc, Barzilai-Borwein trial steps, and an exact
//! sort-based Euclidean projection of each row onto the simplex. Interior-only
//! models use the shrunken simplex `{x >= eps, sum x = 1}` instead.
//!
//! Optimality is certified after the fact by recovering the KKT multipliers
//! (one equality multiplier per row, one inequality multiplier per entry) and
//! reporting the stationarity and complementarity violations.

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{MfgError, Result};
use crate::ops::{individual_costs, push_forward, stage_objective};
use crate::scalar::Scalar;
use crate::types::{CostVector, Distribution, Matrix, StrategyMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSolverConfig<S> {
    pub max_iters: usize,
    /// Bound on `||P - Proj(P - grad H)||_inf` at the returned iterate.
    pub grad_tol: S,
    /// Trial step of the first iteration; later trials use Barzilai-Borwein.
    pub step_init: S,
    pub armijo_c: S,
    pub armijo_shrink: S,
    /// Lower bound on every entry for interior-only models.
    pub interior_eps: S,
}

impl<S: Scalar> Default for InnerSolverConfig<S> {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            grad_tol: S::lit(1e-8),
            step_init: S::one(),
            armijo_c: S::lit(1e-4),
            armijo_shrink: S::lit(0.5),
            interior_eps: S::lit(1e-9),
        }
    }
}

impl<S: Scalar> InnerSolverConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: S| v > S::zero() && v < S::one();
        if self.max_iters == 0 {
            return Err(MfgError::invalid("inner.max_iters must be positive"));
        }
        if !(self.grad_tol > S::zero()) {
            return Err(MfgError::invalid("inner.grad_tol must be positive"));
        }
        if !(self.step_init > S::zero()) || !self.step_init.is_finite() {
            return Err(MfgError::invalid("inner.step_init must be positive"));
        }
        if !unit(self.armijo_c) {
            return Err(MfgError::invalid("inner.armijo_c must lie in (0, 1)"));
        }
        if !unit(self.armijo_shrink) {
            return Err(MfgError::invalid("inner.armijo_shrink must lie in (0, 1)"));
        }
        if !unit(self.interior_eps) {
            return Err(MfgError::invalid("inner.interior_eps must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Entry lower bound the solver enforces for `model`.
    pub fn lower_bound(&self, model: &dyn CostModel<S>) -> S {
        if model.interior_only() {
            self.interior_eps
        } else {
            S::zero()
        }
    }
}

/// Recovered multipliers and optimality violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport<S> {
    /// Row-sum multipliers.
    pub lambda: Vec<S>,
    /// Non-negativity multipliers, row-major `s x s`.
    pub mu: Vec<S>,
    pub stationarity_residual: S,
    pub complementarity_residual: S,
}

#[derive(Debug, Clone)]
pub struct StageSolution<S> {
    pub strategy: StrategyMatrix<S>,
    pub objective: S,
    pub kkt: KktReport<S>,
    pub iterations: usize,
    /// Projected-gradient residual at `strategy`.
    pub residual: S,
}

/// Euclidean projection of `v` onto `{x >= 0, sum x = 1}`.
pub fn project_row_to_simplex<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    if v.is_empty() {
        return Err(MfgError::invalid("projection of an empty vector"));
    }
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(MfgError::invalid(format!(
            "projection input [{k}] is not finite"
        )));
    }
    Ok(project_scaled(v, S::one()))
}

/// Projection onto `{x >= 0, sum x = radius}`, inputs assumed finite.
fn project_scaled<S: Scalar>(v: &[S], radius: S) -> Vec<S> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumsum = S::zero();
    let mut tau = S::zero();
    for (k, &x) in sorted.iter().enumerate() {
        cumsum = cumsum + x;
        let candidate = (cumsum - radius) / S::lit((k + 1) as f64);
        if x - candidate > S::zero() {
            tau = candidate;
        }
    }
    v.iter().map(|&x| (x - tau).max(S::zero())).collect()
}

/// Projection onto `{x >= lower, sum x = 1}`.
pub fn project_row_to_box_simplex<S: Scalar>(v: &[S], lower: S) -> Result<Vec<S>> {
    if lower == S::zero() {
        return project_row_to_simplex(v);
    }
    let radius = S::one() - lower * S::lit(v.len() as f64);
    if !(radius > S::zero()) {
        return Err(MfgError::invalid("interior bound too large for dimension"));
    }
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(MfgError::invalid(format!(
            "projection input [{k}] is not finite"
        )));
    }
    let shifted: Vec<S> = v.iter().map(|&x| x - lower).collect();
    Ok(project_scaled(&shifted, radius)
        .into_iter()
        .map(|x| x + lower)
        .collect())
}

fn project_matrix<S: Scalar>(p: &Matrix<S>, lower: S) -> Result<Matrix<S>> {
    let s = p.dim();
    let mut out = Matrix::zeros(s);
    for i in 0..s {
        out.row_mut(i)
            .copy_from_slice(&project_row_to_box_simplex(p.row(i), lower)?);
    }
    Ok(out)
}

/// `dH/dP_ij = d/dP_ij sum_pq c_pq m_p P_pq + U_j m_i`
pub fn stage_gradient<S: Scalar>(
    m: &Distribution<S>,
    p: &StrategyMatrix<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
) -> Result<Matrix<S>> {
    if m.len() != p.dim() || u_next.len() != p.dim() {
        return Err(MfgError::invalid("stage_gradient: dimension mismatch"));
    }
    gradient_raw(m.as_slice(), p.as_matrix(), u_next.as_slice(), model)
}

fn gradient_raw<S: Scalar>(
    m: &[S],
    p: &Matrix<S>,
    u: &[S],
    model: &dyn CostModel<S>,
) -> Result<Matrix<S>> {
    let mut g = model.grad(m, p)?;
    let s = p.dim();
    for i in 0..s {
        for j in 0..s {
            g.set(i, j, g.get(i, j) + u[j] * m[i]);
        }
    }
    Ok(g)
}

/// `||P - Proj(P - G)||_inf`
fn projected_residual<S: Scalar>(p: &Matrix<S>, g: &Matrix<S>, lower: S) -> Result<S> {
    let trial = project_matrix(&p.axpy(-S::one(), g), lower)?;
    Ok(trial.max_abs_diff(p))
}

/// Minimizes the stage social cost from the uniform strategy.
pub fn solve_stage<S: Scalar>(
    m: &Distribution<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
    cfg: &InnerSolverConfig<S>,
) -> Result<StageSolution<S>> {
    let start = StrategyMatrix::uniform(m.len())?;
    solve_stage_from(m, u_next, model, cfg, &start)
}

/// Minimizes the stage social cost starting at `start`.
pub fn solve_stage_from<S: Scalar>(
    m: &Distribution<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
    cfg: &InnerSolverConfig<S>,
    start: &StrategyMatrix<S>,
) -> Result<StageSolution<S>> {
    run_projected_gradient(m, u_next, model, cfg, start, None)
}

/// As [`solve_stage_from`], also returning the objective after every
/// accepted step (starting with the initial objective).
pub fn solve_stage_traced<S: Scalar>(
    m: &Distribution<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
    cfg: &InnerSolverConfig<S>,
    start: &StrategyMatrix<S>,
) -> Result<(StageSolution<S>, Vec<S>)> {
    let mut trace = Vec::new();
    let sol = run_projected_gradient(m, u_next, model, cfg, start, Some(&mut trace))?;
    Ok((sol, trace))
}

fn run_projected_gradient<S: Scalar>(
    m: &Distribution<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
    cfg: &InnerSolverConfig<S>,
    start: &StrategyMatrix<S>,
    mut trace: Option<&mut Vec<S>>,
) -> Result<StageSolution<S>> {
    cfg.validate()?;
    let s = m.len();
    if u_next.len() != s || start.dim() != s {
        return Err(MfgError::invalid("solve_stage: dimension mismatch"));
    }
    let lower = cfg.lower_bound(model);
    let mv = m.as_slice();
    let u = u_next.as_slice();
    let noise = S::epsilon() * S::lit(1e3);
    let step_min = S::lit(1e-12);
    let step_max = S::lit(1e12);

    let mut p = project_matrix(start.as_matrix(), lower)?;
    let mut f = stage_objective(mv, &p, u, model)?;
    let mut g = gradient_raw(mv, &p, u, model)?;
    let mut step = cfg.step_init;
    if let Some(t) = trace.as_deref_mut() {
        t.push(f);
    }

    let mut residual = projected_residual(&p, &g, lower)?;
    let mut iterations = 0;
    while residual > cfg.grad_tol {
        if iterations == cfg.max_iters {
            return Err(convergence_failure(iterations, residual, &p));
        }
        iterations += 1;

        let mut t = step;
        let mut shrunk = false;
        let (cand, f_cand, g_cand) = loop {
            let cand = project_matrix(&p.axpy(-t, &g), lower)?;
            let d = cand.axpy(-S::one(), &p);
            let gd = centered_dot(&g, &d);
            if d.max_abs() == S::zero() || t < S::min_positive_value() {
                // A Barzilai-Borwein step sized by the curvature of an entry
                // pinned at the floor can be too short to move the others.
                if !shrunk && t < step_max {
                    t = (t * S::lit(1e3)).min(step_max);
                    continue;
                }
                // The trial collapsed onto the current point: no representable
                // descent remains along this arc.
                return Err(convergence_failure(iterations, residual, &p));
            }
            // Domain errors mean the trial left the model's domain; shrink.
            let f_cand = match stage_objective(mv, &cand, u, model) {
                Ok(v) if v.is_finite() => v,
                _ => {
                    t = t * cfg.armijo_shrink;
                    shrunk = true;
                    continue;
                }
            };
            if f_cand <= f + cfg.armijo_c * gd {
                let g_cand = gradient_raw(mv, &cand, u, model)?;
                break (cand, f_cand, g_cand);
            }
            // Below rounding noise the value test is meaningless; for a convex
            // objective a non-positive slope at the trial point along the
            // step still guarantees f(cand) <= f(p).
            if gd.abs() <= noise * f.abs().max(S::one()) {
                let g_cand = gradient_raw(mv, &cand, u, model)?;
                if centered_dot(&g_cand, &d) <= S::zero() {
                    let f_keep = f_cand.min(f);
                    break (cand, f_keep, g_cand);
                }
            }
            t = t * cfg.armijo_shrink;
            shrunk = true;
        };

        let sk = cand.axpy(-S::one(), &p);
        let yk = g_cand.axpy(-S::one(), &g);
        let sy = sk.dot(&yk);
        step = if sy > S::zero() {
            (sk.dot(&sk) / sy).max(step_min).min(step_max)
        } else {
            (t * S::lit(2.0)).min(step_max)
        };

        p = cand;
        f = f_cand;
        g = g_cand;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(f);
        }
        residual = projected_residual(&p, &g, lower)?;
    }

    let strategy = StrategyMatrix::from_matrix(p)?;
    let kkt = kkt_from_gradient(strategy.as_matrix(), &g, lower);
    Ok(StageSolution {
        strategy,
        objective: f,
        kkt,
        iterations,
        residual,
    })
}

/// `g . d` for a direction whose rows sum to zero, with each gradient row
/// centered on its mean over the entries that move. Without centering, the
/// row means of `g` times the rounding in the row sums of `d` swamp the true
/// slope near the optimum.
fn centered_dot<S: Scalar>(g: &Matrix<S>, d: &Matrix<S>) -> S {
    let s = g.dim();
    let mut total = S::zero();
    for i in 0..s {
        let (gr, dr) = (g.row(i), d.row(i));
        let moving: Vec<S> = (0..s)
            .filter(|&j| dr[j] != S::zero())
            .map(|j| gr[j])
            .collect();
        if moving.is_empty() {
            continue;
        }
        let mean = moving.iter().copied().sum::<S>() / S::lit(moving.len() as f64);
        total = total + gr.iter().zip(dr).map(|(&a, &b)| (a - mean) * b).sum::<S>();
    }
    total
}

fn convergence_failure<S: Scalar>(iterations: usize, residual: S, p: &Matrix<S>) -> MfgError {
    MfgError::Convergence {
        solver: "stage solver",
        iterations,
        residual: residual.to_f64_lossy(),
        history: Vec::new(),
        best: Some(p.as_flat().iter().map(|x| x.to_f64_lossy()).collect()),
    }
}

/// Entries within this distance of the lower bound count as active.
const ACTIVE_TOL: f64 = 1e-7;

fn kkt_from_gradient<S: Scalar>(p: &Matrix<S>, g: &Matrix<S>, lower: S) -> KktReport<S> {
    let s = p.dim();
    let active_tol = S::lit(ACTIVE_TOL);
    let mut lambda = Vec::with_capacity(s);
    let mut mu = vec![S::zero(); s * s];
    let mut stationarity = S::zero();
    let mut complementarity = S::zero();
    for i in 0..s {
        let row = p.row(i);
        let grow = g.row(i);
        let interior: Vec<usize> = (0..s).filter(|&j| row[j] - lower > active_tol).collect();
        let lam = if interior.is_empty() {
            grow.iter().copied().fold(S::infinity(), S::min)
        } else {
            interior.iter().map(|&j| grow[j]).sum::<S>() / S::lit(interior.len() as f64)
        };
        for j in 0..s {
            let slack = grow[j] - lam;
            if interior.contains(&j) {
                stationarity = stationarity.max(slack.abs());
            } else {
                // dH/dP_ij - lambda_i - mu_ij = 0 with mu_ij >= 0
                let mu_ij = slack.max(S::zero());
                stationarity = stationarity.max((-slack).max(S::zero()));
                complementarity = complementarity.max(mu_ij * (row[j] - lower).abs());
                mu[i * s + j] = mu_ij;
            }
        }
        lambda.push(lam);
    }
    KktReport {
        lambda,
        mu,
        stationarity_residual: stationarity,
        complementarity_residual: complementarity,
    }
}

/// KKT multipliers and violations at `p`, with the default interior bound.
pub fn kkt_residuals<S: Scalar>(
    m: &Distribution<S>,
    p: &StrategyMatrix<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
) -> Result<KktReport<S>> {
    kkt_residuals_with(m, p, u_next, model, &InnerSolverConfig::default())
}

pub fn kkt_residuals_with<S: Scalar>(
    m: &Distribution<S>,
    p: &StrategyMatrix<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
    cfg: &InnerSolverConfig<S>,
) -> Result<KktReport<S>> {
    let g = stage_gradient(m, p, u_next, model)?;
    Ok(kkt_from_gradient(p.as_matrix(), &g, cfg.lower_bound(model)))
}

/// The three value maps of the stage problem at its optimum.
#[derive(Debug, Clone)]
pub struct StageOperators<S> {
    /// Optimal social cost.
    pub phi: S,
    /// Individual costs under the optimal strategy.
    pub gamma: CostVector<S>,
    /// Distribution pushed forward by the optimal strategy.
    pub theta: Distribution<S>,
    pub strategy: StrategyMatrix<S>,
}

pub fn stage_operators<S: Scalar>(
    m: &Distribution<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
    cfg: &InnerSolverConfig<S>,
) -> Result<StageOperators<S>> {
    let sol = solve_stage(m, u_next, model, cfg)?;
    operators_at(m, u_next, model, sol.strategy)
}

pub(crate) fn operators_at<S: Scalar>(
    m: &Distribution<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
    strategy: StrategyMatrix<S>,
) -> Result<StageOperators<S>> {
    let gamma = individual_costs(m, &strategy, u_next, model)?;
    let phi = m.dot(gamma.as_slice());
    let theta = push_forward(m, &strategy)?;
    Ok(StageOperators {
        phi,
        gamma,
        theta,
        strategy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{example1_cost, ConstantCost, Example1Params, ZeroCost};

    fn d(v: &[f64]) -> Distribution<f64> {
        Distribution::new(v.to_vec()).unwrap()
    }

    fn u(v: &[f64]) -> CostVector<f64> {
        CostVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_row_to_simplex(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(project_row_to_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let x = project_row_to_simplex(&[0.4f64, 0.4, 0.4]).unwrap();
        for v in x {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(project_row_to_simplex(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn box_projection_respects_floor() {
        let x = project_row_to_box_simplex(&[5.0, -3.0, 0.0], 1e-3).unwrap();
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(x.iter().all(|&v| v >= 1e-3 - 1e-18));
        assert!((x[1] - 1e-3).abs() < 1e-18 && (x[2] - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn gradient_trivial_models() {
        let m = d(&[0.3, 0.7]);
        let p = StrategyMatrix::new(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let un = u(&[1.0, -2.0]);
        let g = stage_gradient(&m, &p, &un, &ZeroCost).unwrap();
        let gk = stage_gradient(&m, &p, &un, &ConstantCost { kappa: 0.5 }).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.get(i, j) - un[j] * m[i]).abs() < 1e-15);
                assert!((gk.get(i, j) - (0.5 + un[j]) * m[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_cost_routes_to_cheapest_state() {
        let sol = solve_stage(
            &d(&[0.5, 0.5]),
            &u(&[0.0, 1.0]),
            &ZeroCost,
            &Default::default(),
        )
        .unwrap();
        for i in 0..2 {
            assert!((sol.strategy.get(i, 0) - 1.0).abs() < 1e-12);
        }
        assert!(sol.objective.abs() < 1e-12);
        // the boundary entries carry the multiplier
        assert!(sol.kkt.mu[1] > 0.0 && sol.kkt.mu[3] > 0.0);
        assert!(sol.kkt.stationarity_residual < 1e-12);
    }

    #[test]
    fn zero_cost_flat_objective() {
        let sol = solve_stage(
            &d(&[0.2, 0.8]),
            &u(&[3.0, 3.0]),
            &ZeroCost,
            &Default::default(),
        )
        .unwrap();
        assert!((sol.objective - 3.0).abs() < 1e-14);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn example1_interior_kkt() {
        let model = example1_cost(Example1Params::new(1.0, 1.0, 1.0).unwrap());
        let sol = solve_stage(
            &d(&[0.5, 0.5]),
            &u(&[0.0, 0.3]),
            &model,
            &Default::default(),
        )
        .unwrap();
        assert!(sol.kkt.stationarity_residual <= 1e-6);
        assert!(sol.kkt.complementarity_residual <= 1e-6);
        assert!(sol.kkt.mu.iter().all(|&x| x.abs() < 1e-12));
        let again = kkt_residuals(&d(&[0.5, 0.5]), &sol.strategy, &u(&[0.0, 0.3]), &model).unwrap();
        assert_eq!(again.lambda.len(), 2);
        assert!(again.stationarity_residual <= 1e-6);
    }

    #[test]
    fn far_from_optimum_probe() {
        let model = example1_cost(Example1Params::new(1.0, 1.0, 1.0).unwrap());
        let report = kkt_residuals(
            &d(&[0.5, 0.5]),
            &StrategyMatrix::uniform(2).unwrap(),
            &u(&[0.0, 10.0]),
            &model,
        )
        .unwrap();
        assert!(report.stationarity_residual > 1e-3);
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let model = example1_cost(Example1Params::new(1.0, 1.0, 1.0).unwrap());
        let cfg = InnerSolverConfig {
            max_iters: 1,
            grad_tol: 1e-14,
            ..Default::default()
        };
        match solve_stage(&d(&[0.5, 0.5]), &u(&[0.0, 1.0]), &model, &cfg) {
            Err(MfgError::Convergence {
                best: Some(b),
                residual,
                ..
            }) => {
                assert_eq!(b.len(), 4);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = InnerSolverConfig::<f64> {
            armijo_c: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = InnerSolverConfig::<f64> {
            grad_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(InnerSolverConfig::<f64>::default().validate().is_ok());
    }
}

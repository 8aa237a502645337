//! Transition-cost families `c_ij(m, P)`.
//!
//! Every model implements [`CostModel`]: pointwise evaluation, the gradient of
//! the aggregate running cost `sum_pq c_pq(m, P) m_p P_pq` with respect to each
//! `P_ij`, and two structural flags used by the solvers and probes.
//!
//! The logarithmic models are only defined for `0 < P_ij < 1`; evaluating them
//! on the simplex boundary is a [`MfgError::NumericDomain`] error. The stage
//! solver keeps its iterates inside `[eps, 1 - eps]` so it never gets there.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::scalar::Scalar;
use crate::types::{CostVector, Distribution, Matrix, StrategyMatrix};

pub trait CostModel<S: Scalar>: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// `c_ij(m, P)`. `p` need not be row-stochastic, which lets finite
    /// differences step off the simplex.
    fn eval(&self, m: &[S], p: &Matrix<S>, i: usize, j: usize) -> Result<S>;

    /// Entry `(i, j)` is `d/dP_ij sum_pq c_pq(m, P) m_p P_pq`.
    fn grad(&self, m: &[S], p: &Matrix<S>) -> Result<Matrix<S>>;

    /// `c_ij` depends on row `i` of `P` only.
    fn row_decoupled(&self) -> bool;

    /// Undefined on the boundary of the simplex.
    fn interior_only(&self) -> bool;

    /// All `c_ij` at once.
    fn cost_matrix(&self, m: &[S], p: &Matrix<S>) -> Result<Matrix<S>> {
        let s = p.dim();
        let mut out = Matrix::zeros(s);
        for i in 0..s {
            for j in 0..s {
                out.set(i, j, self.eval(m, p, i, j)?);
            }
        }
        Ok(out)
    }
}

pub type SharedModel<S> = Arc<dyn CostModel<S>>;

fn check_open_unit<S: Scalar>(x: S, i: usize, j: usize) -> Result<()> {
    if x > S::zero() && x < S::one() {
        Ok(())
    } else {
        Err(MfgError::NumericDomain {
            i,
            j,
            detail: format!("P_ij = {x} outside (0, 1), log term undefined"),
        })
    }
}

fn finite_or_domain<S: Scalar>(v: S, i: usize, j: usize) -> Result<S> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MfgError::NumericDomain {
            i,
            j,
            detail: format!("cost evaluated to {v}"),
        })
    }
}

/// `-x / ln x`, strictly increasing and convex on `(0, 1)`.
pub fn neg_x_over_ln<S: Scalar>(x: S) -> S {
    -x / x.ln()
}

/// Derivative of `x * (-x / ln x) = -x^2 / ln x`, i.e. `x (1 - 2 ln x) / ln^2 x`.
fn d_neg_x2_over_ln<S: Scalar>(x: S) -> S {
    let l = x.ln();
    x * (S::one() - S::lit(2.0) * l) / (l * l)
}

/// `(m P)_j`
fn column_mass<S: Scalar>(m: &[S], p: &Matrix<S>, j: usize) -> S {
    (0..p.dim()).map(|q| m[q] * p.get(q, j)).sum()
}

/// `sum_{q != i} m_q P_qj`
fn column_mass_excluding<S: Scalar>(m: &[S], p: &Matrix<S>, i: usize, j: usize) -> S {
    (0..p.dim())
        .filter(|&q| q != i)
        .map(|q| m[q] * p.get(q, j))
        .sum()
}

/// `c_ij = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCost;

impl<S: Scalar> CostModel<S> for ZeroCost {
    fn name(&self) -> &'static str {
        "zero"
    }
    fn eval(&self, _m: &[S], _p: &Matrix<S>, _i: usize, _j: usize) -> Result<S> {
        Ok(S::zero())
    }
    fn grad(&self, _m: &[S], p: &Matrix<S>) -> Result<Matrix<S>> {
        Ok(Matrix::zeros(p.dim()))
    }
    fn row_decoupled(&self) -> bool {
        true
    }
    fn interior_only(&self) -> bool {
        false
    }
}

/// `c_ij = kappa`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantCost<S> {
    pub kappa: S,
}

impl<S: Scalar> CostModel<S> for ConstantCost<S> {
    fn name(&self) -> &'static str {
        "constant"
    }
    fn eval(&self, _m: &[S], _p: &Matrix<S>, _i: usize, _j: usize) -> Result<S> {
        Ok(self.kappa)
    }
    fn grad(&self, m: &[S], p: &Matrix<S>) -> Result<Matrix<S>> {
        let s = p.dim();
        let mut g = Matrix::zeros(s);
        for i in 0..s {
            for j in 0..s {
                g.set(i, j, self.kappa * m[i]);
            }
        }
        Ok(g)
    }
    fn row_decoupled(&self) -> bool {
        true
    }
    fn interior_only(&self) -> bool {
        false
    }
}

/// Weights of the congestion/entropy model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Params<S> {
    pub alpha1: S,
    pub alpha2: S,
    pub alpha3: S,
}

impl<S: Scalar> Example1Params<S> {
    pub fn new(alpha1: S, alpha2: S, alpha3: S) -> Result<Self> {
        for (name, v) in [("alpha1", alpha1), ("alpha2", alpha2), ("alpha3", alpha3)] {
            if !(v > S::zero() && v.is_finite()) {
                return Err(MfgError::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self {
            alpha1,
            alpha2,
            alpha3,
        })
    }
}

/// `c_ij = a1 m_i + a2 (m P)_j - a3 P_ij / ln P_ij`
///
/// The middle term couples all rows through the arrival mass at `j`.
#[derive(Debug, Clone, Copy)]
pub struct Example1<S> {
    pub params: Example1Params<S>,
}

pub fn example1_cost<S: Scalar>(params: Example1Params<S>) -> Example1<S> {
    Example1 { params }
}

impl<S: Scalar> CostModel<S> for Example1<S> {
    fn name(&self) -> &'static str {
        "example1"
    }

    fn eval(&self, m: &[S], p: &Matrix<S>, i: usize, j: usize) -> Result<S> {
        let x = p.get(i, j);
        check_open_unit(x, i, j)?;
        let a = &self.params;
        let v = a.alpha1 * m[i] + a.alpha2 * column_mass(m, p, j) + a.alpha3 * neg_x_over_ln(x);
        finite_or_domain(v, i, j)
    }

    fn grad(&self, m: &[S], p: &Matrix<S>) -> Result<Matrix<S>> {
        let s = p.dim();
        let a = &self.params;
        let two = S::lit(2.0);
        let mass: Vec<S> = (0..s).map(|j| column_mass(m, p, j)).collect();
        let mut g = Matrix::zeros(s);
        for i in 0..s {
            for j in 0..s {
                let x = p.get(i, j);
                check_open_unit(x, i, j)?;
                let v = m[i]
                    * (a.alpha1 * m[i] + two * a.alpha2 * mass[j] + a.alpha3 * d_neg_x2_over_ln(x));
                g.set(i, j, finite_or_domain(v, i, j)?);
            }
        }
        Ok(g)
    }

    fn row_decoupled(&self) -> bool {
        false
    }
    fn interior_only(&self) -> bool {
        true
    }
}

/// `c_ij = a1 m_i - a2 P_ij / ln P_ij`, the row-decoupled variant.
#[derive(Debug, Clone, Copy)]
pub struct Example1Variant<S> {
    pub alpha1: S,
    pub alpha2: S,
}

pub fn example1_variant_cost<S: Scalar>(alpha1: S, alpha2: S) -> Result<Example1Variant<S>> {
    for (name, v) in [("alpha1", alpha1), ("alpha2", alpha2)] {
        if !(v > S::zero() && v.is_finite()) {
            return Err(MfgError::invalid(format!("{name} must be > 0, got {v}")));
        }
    }
    Ok(Example1Variant { alpha1, alpha2 })
}

impl<S: Scalar> CostModel<S> for Example1Variant<S> {
    fn name(&self) -> &'static str {
        "example1-variant"
    }

    fn eval(&self, m: &[S], p: &Matrix<S>, i: usize, j: usize) -> Result<S> {
        let x = p.get(i, j);
        check_open_unit(x, i, j)?;
        finite_or_domain(self.alpha1 * m[i] + self.alpha2 * neg_x_over_ln(x), i, j)
    }

    fn grad(&self, m: &[S], p: &Matrix<S>) -> Result<Matrix<S>> {
        let s = p.dim();
        let mut g = Matrix::zeros(s);
        for i in 0..s {
            for j in 0..s {
                let x = p.get(i, j);
                check_open_unit(x, i, j)?;
                let v = m[i] * (self.alpha1 * m[i] + self.alpha2 * d_neg_x2_over_ln(x));
                g.set(i, j, finite_or_domain(v, i, j)?);
            }
        }
        Ok(g)
    }

    fn row_decoupled(&self) -> bool {
        true
    }
    fn interior_only(&self) -> bool {
        true
    }
}

/// `c_ij = m_i + sum_{p != i} m_p P_pj + 2 ln P_ij`
///
/// The log term is read as `ln(P_ij^2)`; with that reading the first-order
/// conditions reproduce the softmax form solved by [`example2_closed_form`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Example2;

pub fn example2_cost() -> Example2 {
    Example2
}

impl<S: Scalar> CostModel<S> for Example2 {
    fn name(&self) -> &'static str {
        "example2"
    }

    fn eval(&self, m: &[S], p: &Matrix<S>, i: usize, j: usize) -> Result<S> {
        let x = p.get(i, j);
        check_open_unit(x, i, j)?;
        let v = m[i] + column_mass_excluding(m, p, i, j) + S::lit(2.0) * x.ln();
        finite_or_domain(v, i, j)
    }

    fn grad(&self, m: &[S], p: &Matrix<S>) -> Result<Matrix<S>> {
        // d/dP_ij hits c_ij directly (m_i + coupling + 2 ln x + 2) and every
        // c_kj with k != i through its coupling sum (m_i m_k P_kj each).
        let s = p.dim();
        let two = S::lit(2.0);
        let mut g = Matrix::zeros(s);
        for i in 0..s {
            for j in 0..s {
                let x = p.get(i, j);
                check_open_unit(x, i, j)?;
                let others = column_mass_excluding(m, p, i, j);
                let v = m[i] * (m[i] + two * others + two * x.ln() + two);
                g.set(i, j, finite_or_domain(v, i, j)?);
            }
        }
        Ok(g)
    }

    fn row_decoupled(&self) -> bool {
        false
    }
    fn interior_only(&self) -> bool {
        true
    }
}

/// `c_ij = m_i + 2 ln P_ij`, the row-decoupled variant of [`Example2`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Example2Variant;

pub fn example2_variant_cost() -> Example2Variant {
    Example2Variant
}

impl<S: Scalar> CostModel<S> for Example2Variant {
    fn name(&self) -> &'static str {
        "example2-variant"
    }

    fn eval(&self, m: &[S], p: &Matrix<S>, i: usize, j: usize) -> Result<S> {
        let x = p.get(i, j);
        check_open_unit(x, i, j)?;
        finite_or_domain(m[i] + S::lit(2.0) * x.ln(), i, j)
    }

    fn grad(&self, m: &[S], p: &Matrix<S>) -> Result<Matrix<S>> {
        let s = p.dim();
        let two = S::lit(2.0);
        let mut g = Matrix::zeros(s);
        for i in 0..s {
            for j in 0..s {
                let x = p.get(i, j);
                check_open_unit(x, i, j)?;
                g.set(
                    i,
                    j,
                    finite_or_domain(m[i] * (m[i] + two * x.ln() + two), i, j)?,
                );
            }
        }
        Ok(g)
    }

    fn row_decoupled(&self) -> bool {
        true
    }
    fn interior_only(&self) -> bool {
        true
    }
}

/// Iterates `P_ij <- softmax_j(-sum_{p != i} m_p P_pj - U_j / 2)` from the
/// uniform matrix until successive iterates differ by at most `tol` per entry.
pub fn example2_closed_form<S: Scalar>(
    m: &Distribution<S>,
    u_next: &CostVector<S>,
    tol: S,
) -> Result<StrategyMatrix<S>> {
    const MAX_ITERS: usize = 10_000;
    let s = m.len();
    if u_next.len() != s {
        return Err(MfgError::invalid("closed form: dimension mismatch"));
    }
    if !(tol > S::zero()) {
        return Err(MfgError::invalid("closed form: tol must be positive"));
    }
    let half = S::lit(0.5);
    let mv = m.as_slice();
    let u = u_next.as_slice();
    let mut p = StrategyMatrix::uniform(s)?.into_matrix();
    let mut residual = S::infinity();
    for _ in 0..MAX_ITERS {
        let mut next = Matrix::zeros(s);
        for i in 0..s {
            let logits: Vec<S> = (0..s)
                .map(|j| -column_mass_excluding(mv, &p, i, j) - half * u[j])
                .collect();
            let top = logits.iter().copied().fold(S::neg_infinity(), S::max);
            let w: Vec<S> = logits.iter().map(|&z| (z - top).exp()).collect();
            let total: S = w.iter().copied().sum();
            for j in 0..s {
                next.set(i, j, w[j] / total);
            }
        }
        residual = next.max_abs_diff(&p);
        p = next;
        if residual <= tol {
            return StrategyMatrix::from_matrix(p);
        }
    }
    Err(MfgError::Convergence {
        solver: "example2 closed form",
        iterations: MAX_ITERS,
        residual: residual.to_f64_lossy(),
        history: Vec::new(),
        best: Some(p.as_flat().iter().map(|x| x.to_f64_lossy()).collect()),
    })
}

/// Named model plus parameters, as selected from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "kebab-case")]
pub enum ModelSpec {
    Zero,
    Constant {
        kappa: f64,
    },
    Example1 {
        alpha1: f64,
        alpha2: f64,
        alpha3: f64,
    },
    Example1Variant {
        alpha1: f64,
        alpha2: f64,
    },
    Example2,
    Example2Variant,
}

impl ModelSpec {
    pub const NAMES: [&'static str; 6] = [
        "zero",
        "constant",
        "example1",
        "example1-variant",
        "example2",
        "example2-variant",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Zero => "zero",
            ModelSpec::Constant { .. } => "constant",
            ModelSpec::Example1 { .. } => "example1",
            ModelSpec::Example1Variant { .. } => "example1-variant",
            ModelSpec::Example2 => "example2",
            ModelSpec::Example2Variant => "example2-variant",
        }
    }

    pub fn build<S: Scalar>(&self) -> Result<SharedModel<S>> {
        Ok(match *self {
            ModelSpec::Zero => Arc::new(ZeroCost),
            ModelSpec::Constant { kappa } => {
                if !kappa.is_finite() {
                    return Err(MfgError::invalid("kappa must be finite"));
                }
                Arc::new(ConstantCost {
                    kappa: S::lit(kappa),
                })
            }
            ModelSpec::Example1 {
                alpha1,
                alpha2,
                alpha3,
            } => Arc::new(example1_cost(Example1Params::new(
                S::lit(alpha1),
                S::lit(alpha2),
                S::lit(alpha3),
            )?)),
            ModelSpec::Example1Variant { alpha1, alpha2 } => {
                Arc::new(example1_variant_cost(S::lit(alpha1), S::lit(alpha2))?)
            }
            ModelSpec::Example2 => Arc::new(Example2),
            ModelSpec::Example2Variant => Arc::new(Example2Variant),
        })
    }
}

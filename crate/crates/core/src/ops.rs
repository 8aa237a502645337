//! Forward evolution, stage social cost and the individual-cost recursion.

use crate::cost::CostModel;
use crate::error::{MfgError, Result};
use crate::scalar::Scalar;
use crate::types::{CostVector, Distribution, Matrix, StrategyMatrix};

fn check_dims(what: &str, s: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&n| n != s) {
        return Err(MfgError::invalid(format!(
            "{what}: dimension mismatch (expected {s}, got {others:?})"
        )));
    }
    Ok(())
}

/// `result_j = sum_i m_i P_ij`
pub fn push_forward<S: Scalar>(
    m: &Distribution<S>,
    p: &StrategyMatrix<S>,
) -> Result<Distribution<S>> {
    check_dims("push_forward", p.dim(), &[m.len()])?;
    Distribution::new(push_forward_raw(m.as_slice(), p.as_matrix()))
}

pub(crate) fn push_forward_raw<S: Scalar>(m: &[S], p: &Matrix<S>) -> Vec<S> {
    let s = p.dim();
    (0..s)
        .map(|j| (0..s).map(|i| m[i] * p.get(i, j)).sum())
        .collect()
}

/// Stage objective `H = sum_ij (c_ij(m, P) + U_j) m_i P_ij`.
pub fn social_cost<S: Scalar>(
    m: &Distribution<S>,
    p: &StrategyMatrix<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
) -> Result<S> {
    check_dims("social_cost", p.dim(), &[m.len(), u_next.len()])?;
    stage_objective(m.as_slice(), p.as_matrix(), u_next.as_slice(), model)
}

/// [`social_cost`] on an unvalidated matrix.
pub fn stage_objective<S: Scalar>(
    m: &[S],
    p: &Matrix<S>,
    u_next: &[S],
    model: &dyn CostModel<S>,
) -> Result<S> {
    let c = model.cost_matrix(m, p)?;
    let s = p.dim();
    let mut total = S::zero();
    for i in 0..s {
        if m[i] == S::zero() {
            continue;
        }
        for j in 0..s {
            total = total + (c.get(i, j) + u_next[j]) * m[i] * p.get(i, j);
        }
    }
    Ok(total)
}

/// `Gamma_i = sum_j (c_ij(m, P) + U_j) P_ij`; `m . Gamma` is the social cost.
pub fn individual_costs<S: Scalar>(
    m: &Distribution<S>,
    p: &StrategyMatrix<S>,
    u_next: &CostVector<S>,
    model: &dyn CostModel<S>,
) -> Result<CostVector<S>> {
    check_dims("individual_costs", p.dim(), &[m.len(), u_next.len()])?;
    let c = model.cost_matrix(m.as_slice(), p.as_matrix())?;
    let s = p.dim();
    let u = u_next.as_slice();
    let values = (0..s)
        .map(|i| (0..s).map(|j| (c.get(i, j) + u[j]) * p.get(i, j)).sum())
        .collect();
    CostVector::new(values)
}

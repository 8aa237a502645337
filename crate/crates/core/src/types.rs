//! Validated domain types: distributions on the probability simplex,
//! row-stochastic strategy matrices and per-state cost vectors.
//!
//! All three are immutable once built. Constructors accept inputs that miss
//! the simplex by no more than [`Scalar::simplex_tol`] and snap them back onto
//! it; anything further off is rejected.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::scalar::Scalar;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn from_flat(n: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != n * n {
            return Err(MfgError::invalid(format!(
                "matrix data has {} entries, expected {}",
                data.len(),
                n * n
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(MfgError::invalid(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks(self.n.max(1))
    }

    pub fn as_flat(&self) -> &[S] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix<S>) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix<S>) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Matrix<S> {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self + scale * other`
    pub fn axpy(&self, scale: S, other: &Matrix<S>) -> Matrix<S> {
        Matrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + scale * b)
                .collect(),
        }
    }
}

fn check_dim(n: usize, what: &str) -> Result<()> {
    if n < 2 {
        return Err(MfgError::invalid(format!(
            "{what} needs at least 2 states, got {n}"
        )));
    }
    Ok(())
}

/// Validates one probability vector and snaps it onto the simplex.
fn snap_to_simplex<S: Scalar>(v: &mut [S], what: &str) -> Result<()> {
    let tol = S::simplex_tol();
    for (k, x) in v.iter_mut().enumerate() {
        if !x.is_finite() {
            return Err(MfgError::invalid(format!("{what}[{k}] is not finite")));
        }
        if *x < -tol {
            return Err(MfgError::invalid(format!("{what}[{k}] = {x} is negative")));
        }
        if *x < S::zero() {
            *x = S::zero();
        }
    }
    let total: S = v.iter().copied().sum();
    if (total - S::one()).abs() > tol {
        return Err(MfgError::invalid(format!(
            "{what} sums to {total}, expected 1"
        )));
    }
    for x in v.iter_mut() {
        *x = *x / total;
    }
    Ok(())
}

/// Point on the probability simplex over `s >= 2` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<S>", into = "Vec<S>")]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct Distribution<S> {
    probs: Vec<S>,
}

impl<S: Scalar> Distribution<S> {
    pub fn new(mut probs: Vec<S>) -> Result<Self> {
        check_dim(probs.len(), "distribution")?;
        snap_to_simplex(&mut probs, "distribution")?;
        Ok(Self { probs })
    }

    pub fn uniform(s: usize) -> Result<Self> {
        check_dim(s, "distribution")?;
        let w = S::one() / S::lit(s as f64);
        Ok(Self { probs: vec![w; s] })
    }

    /// Unit mass on `state`.
    pub fn point(s: usize, state: usize) -> Result<Self> {
        check_dim(s, "distribution")?;
        if state >= s {
            return Err(MfgError::invalid(format!("state {state} out of range")));
        }
        let mut probs = vec![S::zero(); s];
        probs[state] = S::one();
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<S> {
        self.probs
    }

    pub fn min_entry(&self) -> S {
        self.probs.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max_abs_diff(&self, other: &Distribution<S>) -> S {
        max_abs_diff(&self.probs, &other.probs)
    }

    /// `(1 - theta) * self + theta * other`
    pub fn blend(&self, other: &Distribution<S>, theta: S) -> Result<Self> {
        if self.len() != other.len() {
            return Err(MfgError::invalid("blend: dimension mismatch"));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(&a, &b)| (S::one() - theta) * a + theta * b)
            .collect();
        Self::new(probs)
    }

    pub fn dot(&self, v: &[S]) -> S {
        self.probs.iter().zip(v).map(|(&a, &b)| a * b).sum()
    }
}

impl<S: Scalar> TryFrom<Vec<S>> for Distribution<S> {
    type Error = MfgError;
    fn try_from(v: Vec<S>) -> Result<Self> {
        Self::new(v)
    }
}

impl<S> From<Distribution<S>> for Vec<S> {
    fn from(d: Distribution<S>) -> Vec<S> {
        d.probs
    }
}

impl<S> Index<usize> for Distribution<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.probs[i]
    }
}

/// Row-stochastic `s x s` transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<S>>", into = "Vec<Vec<S>>")]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct StrategyMatrix<S> {
    inner: Matrix<S>,
}

impl<S: Scalar> StrategyMatrix<S> {
    pub fn new(rows: Vec<Vec<S>>) -> Result<Self> {
        Self::from_matrix(Matrix::from_rows(&rows)?)
    }

    pub fn from_matrix(mut inner: Matrix<S>) -> Result<Self> {
        check_dim(inner.dim(), "strategy matrix")?;
        for i in 0..inner.dim() {
            snap_to_simplex(inner.row_mut(i), &format!("strategy row {i}"))?;
        }
        Ok(Self { inner })
    }

    pub fn identity(s: usize) -> Result<Self> {
        check_dim(s, "strategy matrix")?;
        let mut inner = Matrix::zeros(s);
        for i in 0..s {
            inner.set(i, i, S::one());
        }
        Ok(Self { inner })
    }

    pub fn uniform(s: usize) -> Result<Self> {
        check_dim(s, "strategy matrix")?;
        let w = S::one() / S::lit(s as f64);
        Ok(Self {
            inner: Matrix::from_flat(s, vec![w; s * s])?,
        })
    }

    /// Every row equal to `row`.
    pub fn from_repeated_row(row: &Distribution<S>) -> Self {
        let s = row.len();
        let mut data = Vec::with_capacity(s * s);
        for _ in 0..s {
            data.extend_from_slice(row.as_slice());
        }
        Self {
            inner: Matrix { n: s, data },
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.inner.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[S] {
        self.inner.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix<S> {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix<S> {
        self.inner
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        self.inner.to_rows()
    }

    pub fn max_abs_diff(&self, other: &StrategyMatrix<S>) -> S {
        self.inner.max_abs_diff(&other.inner)
    }

    /// Copy with row `i` replaced by `q`.
    pub fn with_row(&self, i: usize, q: &Distribution<S>) -> Result<Self> {
        if q.len() != self.dim() || i >= self.dim() {
            return Err(MfgError::invalid("with_row: dimension mismatch"));
        }
        let mut inner = self.inner.clone();
        inner.row_mut(i).copy_from_slice(q.as_slice());
        Ok(Self { inner })
    }
}

impl<S: Scalar> TryFrom<Vec<Vec<S>>> for StrategyMatrix<S> {
    type Error = MfgError;
    fn try_from(rows: Vec<Vec<S>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl<S: Scalar> From<StrategyMatrix<S>> for Vec<Vec<S>> {
    fn from(p: StrategyMatrix<S>) -> Vec<Vec<S>> {
        p.to_rows()
    }
}

/// Per-state cost vector, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<S>", into = "Vec<S>")]
#[serde(bound(
    serialize = "S: Scalar + Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct CostVector<S> {
    values: Vec<S>,
}

impl<S: Scalar> CostVector<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(MfgError::invalid("cost vector is empty"));
        }
        if let Some(k) = values.iter().position(|x| !x.is_finite()) {
            return Err(MfgError::invalid(format!("cost[{k}] is not finite")));
        }
        Ok(Self { values })
    }

    pub fn zeros(s: usize) -> Self {
        Self {
            values: vec![S::zero(); s],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }

    /// `self + a * 1`
    pub fn shifted(&self, a: S) -> Self {
        Self {
            values: self.values.iter().map(|&x| x + a).collect(),
        }
    }

    /// Shift so that the first entry is zero.
    pub fn normalized_first(&self) -> Self {
        self.shifted(-self.values[0])
    }

    pub fn max_abs_diff(&self, other: &CostVector<S>) -> S {
        max_abs_diff(&self.values, &other.values)
    }
}

impl<S: Scalar> TryFrom<Vec<S>> for CostVector<S> {
    type Error = MfgError;
    fn try_from(v: Vec<S>) -> Result<Self> {
        Self::new(v)
    }
}

impl<S> From<CostVector<S>> for Vec<S> {
    fn from(c: CostVector<S>) -> Vec<S> {
        c.values
    }
}

impl<S> Index<usize> for CostVector<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.values[i]
    }
}

pub(crate) fn max_abs_diff<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

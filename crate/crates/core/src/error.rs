use thiserror::Error;

pub type Result<T> = std::result::Result<T, MfgError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MfgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A cost term evaluated to a non-finite value or was asked for outside
    /// its domain. Indices are zero-based.
    #[error("numeric domain error at transition ({i}, {j}): {detail}")]
    NumericDomain { i: usize, j: usize, detail: String },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        /// Residual per outer iteration where the solver records one.
        history: Vec<f64>,
        /// Best iterate reached, flattened row-major, when the solver has one.
        best: Option<Vec<f64>>,
    },

    #[error("unsupported size: s = {s} (at most {max} states)")]
    UnsupportedSize { s: usize, max: usize },

    /// Failure inside step `step` of a multi-stage solve.
    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<MfgError>,
    },
}

impl MfgError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MfgError::InvalidInput(msg.into())
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        MfgError::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Strips `AtStep` wrappers.
    pub fn root(&self) -> &MfgError {
        match self {
            MfgError::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_convergence_failure(&self) -> bool {
        matches!(self.root(), MfgError::Convergence { .. })
    }
}

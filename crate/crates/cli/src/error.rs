use std::path::PathBuf;

use mfg_core::MfgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Convergence(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 is success; 1 is reserved for output failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<MfgError> for CliError {
    fn from(e: MfgError) -> Self {
        if e.is_convergence_failure() {
            CliError::Convergence(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

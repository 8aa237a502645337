//! Batch front end for `mfg-core`: parse a JSON run config, dispatch the
//! requested solver or verification, and persist the results.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, Command, RunConfig};
pub use error::CliError;
pub use run::{run, RunSummary};

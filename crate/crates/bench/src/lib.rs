//! Experiment harness for the page-leap migration library: configuration,
//! host inspection, experiment drivers and machine-readable records.

pub mod config;
pub mod env;
pub mod record;
pub mod runner;

use std::io;

use thiserror::Error;

pub use config::{Experiment, ExperimentConfig, Format, Mode, Skew};
pub use env::{env_check, EnvReport};
pub use record::{with_averages, write_records, Record, COLUMNS};
pub use runner::run_experiment;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// Process exit code: 1 for configuration errors, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Runs `cfg`, appends the averaged records and returns everything.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Record>, BenchError> {
    Ok(with_averages(run_experiment(cfg)?))
}

/// Records whose status marks a failure of a mandatory arm.
pub fn failures(records: &[Record]) -> impl Iterator<Item = &Record> {
    records.iter().filter(|r| r.status == "failed")
}

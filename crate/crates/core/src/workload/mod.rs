//! Memory access patterns, paced write bursts with a replayable journal, and
//! a generated columnar lineitem table with two scan queries.

mod access;
mod burst;
mod journal;
mod lineitem;

use std::io;

use thiserror::Error;

pub use access::{random_offsets, run_access_pattern, AccessPattern, AccessResult};
pub use burst::{run_burst, BurstOutcome, BurstSpec, Distribution, ThroughputSample};
pub use journal::{JournalEntry, ReplayError, WriteJournal, RECORD_BYTES};
pub use lineitem::{
    date, orderkey_writer, q1_scan, q6_scan, LineitemTable, Q1Group, Q1Result, Q6Params, Row, BYTES_PER_ROW,
    Q1_DEFAULT_CUTOFF,
};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("write rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("invalid skew: {0}")]
    InvalidSkew(String),
    #[error("need {needed} bytes but the region holds {available}")]
    RegionTooSmall { needed: usize, available: usize },
    #[error("writer count must be positive")]
    NoThreads,
    #[error("corrupt journal: {0}")]
    CorruptJournal(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

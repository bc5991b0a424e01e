use thiserror::Error;

use crate::types::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value of {len} bytes exceeds the {max}-byte limit")]
    ValueTooLarge { len: usize, max: usize },
    #[error("lease model domain error: {0}")]
    Domain(&'static str),
    #[error("ideal lease search exceeded {0} steps")]
    SearchOverflow(u64),
    #[error("garbage collection horizon regressed from {from} to {to}")]
    GcRegression { from: Timestamp, to: Timestamp },
    #[error("history of {0} transactions is too large for brute force (max 8)")]
    HistoryTooLarge(usize),
    #[error("wire decode: {0}")]
    Decode(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

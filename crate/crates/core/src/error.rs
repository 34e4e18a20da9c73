use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SyncError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("nodes {a} and {b} are co-located")]
    CoLocated { a: usize, b: usize },

    #[error("loop diverged at slot {slot}: node {node} period became {period:e} s")]
    LoopDivergence { node: usize, slot: u64, period: f64 },

    #[error("no peer in the neighborhood")]
    EmptyNeighborhood,

    #[error("training diverged at cycle {cycle}, pass {pass}: {reason}")]
    TrainingDiverged { cycle: usize, pass: usize, reason: String },

    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("shape mismatch: expected {expected} entries, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("tape usage error: {0}")]
    Tape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("failed to parse {path}: {message} (line {line}, column {column})")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },

    #[error("no acceptable scenario for seed {seed} after {attempts} attempts")]
    ScenarioExhausted { seed: u64, attempts: usize },

    #[error("{path}: {source}")]
    Io { path: PathBuf, #[source] source: std::io::Error },

    #[error("csv error for {path}: {source}")]
    Csv { path: PathBuf, #[source] source: csv::Error },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SyncError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SyncError::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        SyncError::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

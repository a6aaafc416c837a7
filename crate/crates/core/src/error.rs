use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector at row {row}")]
    ZeroVector { row: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input")]
    EmptyInput,

    #[error("sample {sample} belongs to a singleton cluster")]
    SingletonCluster { sample: usize },

    #[error("partition has fewer than two clusters")]
    SingleClusterPartition,

    #[error("sample {sample} is an outlier")]
    OutlierSample { sample: usize },

    #[error("partition has no clusters")]
    EmptyPartition,

    #[error("centroid bank has no rows")]
    EmptyBank,

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("invalid label row: {0}")]
    Label(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("identity consistency score undefined: empty boundary set")]
    IcsUndefined,

    #[error("incompatible runs: {0}")]
    Incompatible(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

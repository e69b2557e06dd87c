use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field `{field}` is not numeric")]
    NonNumeric { line: usize, field: String },
    #[error("line {line}: required key `{key}` missing")]
    MissingKey { line: usize, key: String },

    #[error("column `{0}` not found")]
    UnknownColumn(String),
    #[error("column `{0}` is not numeric")]
    NotNumeric(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column `{name}` has {got} rows, expected {expected}")]
    RaggedColumn { name: String, expected: usize, got: usize },
    #[error("timestamps out of order for `{ue}` at row {row}")]
    Ordering { ue: String, row: usize },
    #[error("every cell of column `{0}` is flagged; nothing to repair from")]
    IrreparableColumn(String),

    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("checksum mismatch for dataset `{id}`")]
    ChecksumMismatch { id: String },
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("feedback tick {tick} precedes last logged tick {last}")]
    FeedbackOrder { tick: u64, last: u64 },

    #[error("counter saturated at index {index}")]
    CounterSaturated { index: usize },
    #[error("incompatible filters: {0}")]
    IncompatibleFilter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("value {value} of `{feature}` outside [0, 1]")]
    Domain { feature: String, value: f64 },
    #[error("k = {k} exceeds the {available} available features")]
    TooManyFeatures { k: usize, available: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("coordinate descent did not converge after {iterations} sweeps")]
    NotConverged {
        iterations: usize,
        last: Box<crate::models::LinearModel>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("division by zero target at row {0}")]
    ZeroTarget(usize),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("cluster model has no class labels; fit it on labeled test traffic first")]
    Unlabeled,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

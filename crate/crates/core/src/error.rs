use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("generation failed: {0}")]
    Generation(String),

    /// Returned by the level-k protocol when a dataset's context holds fewer
    /// anomalies than the requested level; the harness drops the dataset.
    #[error("dataset skipped: {0}")]
    Skip(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("manifest mismatch: {0}")]
    Manifest(String),
    #[error("truncated checkpoint: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("payload checksum mismatch")]
    Checksum,
    #[error("malformed header: {0}")]
    Header(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: empty file")]
    Empty { path: String },
    #[error("{path}: missing \"label\" column")]
    MissingLabel { path: String },
    #[error("{path}: non-numeric cell at row {row}, column {column} ({value:?})")]
    NonNumeric {
        path: String,
        row: usize,
        column: usize,
        value: String,
    },
    #[error("{path}: label at row {row} is {value}, expected 0 or 1")]
    BadLabel { path: String, row: usize, value: f64 },
    #[error("{path}: row {row} has {found} cells, expected {expected}")]
    Ragged {
        path: String,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

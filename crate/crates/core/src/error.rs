use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("joint table of {cells} cells exceeds the cap of {cap}")]
    ResourceLimit { cells: u128, cap: usize },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("optimization diverged at step {step}: non-finite parameter")]
    Divergence { step: usize },

    #[error("objective undefined at step {step}: synthesis space carries no information")]
    ObjectiveUndefined { step: usize },

    #[error("unsupported format version {found:?} (expected \"1\")")]
    VersionMismatch { found: String },

    #[error("{file}: payload holds {found} bytes, manifest implies {expected}")]
    SizeMismatch {
        file: String,
        expected: u64,
        found: u64,
    },

    #[error("{what}: non-finite value at index {index}")]
    NonFinite { what: String, index: usize },

    #[error("non-positive stddev at index {index} (row {row}, dim {dim}): {value}")]
    NonPositiveStddev {
        index: usize,
        row: usize,
        dim: usize,
        value: f64,
    },

    #[error("fingerprint asymmetric at ({i}, {j}): {a} vs {b}")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },

    #[error("fingerprint diagonal entry {i} is {value}, expected 1")]
    DiagonalDeviation { i: usize, value: f64 },

    #[error("fingerprint entry ({i}, {j}) = {value} outside [0, 1]")]
    OutOfUnitInterval { i: usize, j: usize, value: f64 },

    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),

    #[error("sample id {0:?} missing from labels")]
    MissingSampleId(String),

    #[error("unknown kind {found:?}, expected {expected:?}")]
    WrongKind { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => ErrorClass::Io,
            Error::Divergence { .. } | Error::ObjectiveUndefined { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

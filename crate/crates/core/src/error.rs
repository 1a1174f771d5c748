use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes {found:?} (expected \"OVT1\")")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported dtype code {code}")]
    UnsupportedDType { path: PathBuf, code: u8 },

    #[error("{path}: truncated tensor file (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: non-finite element at flat index {index}")]
    NonFinite { path: PathBuf, index: usize },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{path}:{line}: malformed manifest line: {message}")]
    ManifestLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),

    #[error("invalid instance record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("instance {id:?}: missing feature source `{field}`")]
    MissingFeature { id: String, field: String },

    #[error("labels contain a single class ({0}); both classes are required")]
    SingleClass(String),

    #[error("dimension mismatch: expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("judge unavailable after {attempts} attempts: {message}")]
    JudgeUnavailable { attempts: usize, message: String },

    #[error("judge protocol error: {0}")]
    JudgeProtocol(String),

    #[error("{path}: json: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty tensor")]
    EmptyTensor,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("oracle size exceeded: {pixels} pixels (limit {limit})")]
    OracleSizeExceeded { pixels: usize, limit: usize },

    #[error("backward called without a cached training forward pass")]
    MissingCache,

    #[error("cached forward state is stale: {0}")]
    StaleCache(String),

    #[error("training diverged at epoch {epoch}, sample {sample}: loss is {loss}")]
    Diverged {
        epoch: usize,
        sample: usize,
        loss: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Format(#[from] FormatError),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Decoding failures for the on-disk formats. Each variant maps to a
/// stable numeric code so scripts can distinguish them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: need {needed} bytes at offset {offset}, file has {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unknown component {0:?}")]
    UnknownComponent(String),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported image format at offset {offset}: {reason}")]
    Unsupported { offset: usize, reason: String },

    #[error("corrupt header at offset {offset}: {reason}")]
    CorruptHeader { offset: usize, reason: String },

    #[error("non-finite value at element {0}")]
    NonFinite(usize),

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

impl FormatError {
    pub fn code(&self) -> u8 {
        match self {
            FormatError::BadMagic { .. } => 10,
            FormatError::Truncated { .. } => 11,
            FormatError::ShapeMismatch { .. } => 12,
            FormatError::UnknownComponent(_) => 13,
            FormatError::UnsupportedVersion(_) => 14,
            FormatError::Unsupported { .. } => 15,
            FormatError::CorruptHeader { .. } => 16,
            FormatError::NonFinite(_) => 17,
            FormatError::Manifest { .. } => 18,
        }
    }
}

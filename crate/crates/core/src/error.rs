use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("image has no strictly positive pixel")]
    AllZeroImage,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("grid must be square for a {0} degree rotation")]
    NonSquareGrid(u32),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("operator expected {expected} domain data, got {got}")]
    DomainTagMismatch {
        expected: &'static str,
        got: &'static str,
    },
    #[error("pool '{0}' is empty")]
    EmptyPool(&'static str),
    #[error("reference is all zero")]
    ZeroReference,
    #[error("region of interest is empty")]
    EmptyRoi,
    #[error("degenerate regression input: {0}")]
    DegenerateInput(String),
    #[error("corrupt container header: {0}")]
    CorruptHeader(String),
    #[error("container payload length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("unsupported dtype '{0}'")]
    UnsupportedDtype(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("sample {index}: {source}")]
    Sample {
        index: u64,
        #[source]
        source: Box<ForgeError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ForgeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ForgeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ForgeError::InvalidValue(msg.into())
    }
}

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (e.g. a zero-norm vector).
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke a precondition: mismatched lengths, bad hyperparameters, stale tapes.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    /// A loss or gradient became NaN/Inf during training.
    #[error("non-finite value at step {step} in {component}")]
    NonFinite { step: usize, component: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Errors raised by the binary file readers (IDX, TNSR, TRI1).
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },

    #[error("unknown dtype code 0x{0:02x}")]
    UnknownDtype(u32),

    #[error("truncated {what}: expected {expected} bytes, found {actual}")]
    Truncated {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("trailing data: {0} unexpected bytes after payload")]
    TrailingBytes(usize),

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A scalar argument is out of its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Stream orders or layer layout do not match what an operation expects.
    #[error("wiring error: {0}")]
    Wiring(String),

    /// Input data violates a precondition (labels out of range, empty splits).
    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A binary container has the wrong magic number or layout.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A binary container ended before its declared payload.
    #[error("length error in {path}: expected {expected} bytes, found {found}")]
    Length {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

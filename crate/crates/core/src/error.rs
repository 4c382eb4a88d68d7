use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or count argument is outside its allowed range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Operand shapes do not conform.
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },

    /// A data file could not be decoded.
    #[error("failed to parse {path}: {kind}")]
    Parse { path: PathBuf, kind: ParseError },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// What went wrong while decoding a binary data file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("bad magic number in `{field}`: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        field: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("file truncated while reading `{field}`")]
    Truncated { field: &'static str },
    #[error("record count mismatch: `{images_field}` = {images}, `{labels_field}` = {labels}")]
    CountMismatch {
        images_field: &'static str,
        images: usize,
        labels_field: &'static str,
        labels: usize,
    },
    #[error("invalid value in `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

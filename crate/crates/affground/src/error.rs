//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid hyperparameter or configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Class label out of range or unknown.
    #[error("label error: {0}")]
    Label(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dataset-level inconsistency (missing pairings, bad records).
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Invalid point annotation.
    #[error("annotation error: {0}")]
    Annotation(String),

    /// Manifest or annotation file failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Corrupt or unrecognized container file.
    #[error("format error: {0}")]
    Format(String),

    /// Training diverged or produced non-finite values.
    #[error("training error: {0}")]
    Training(String),

    /// Autograd misuse (non-scalar loss, empty tape).
    #[error("autograd error: {0}")]
    Autograd(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for the CLI: usage problems exit 2, everything
    /// else (domain/data/runtime failures) exits 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }
}

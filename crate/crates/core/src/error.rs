//! Error types shared by the whole crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad inputs, inconsistent sizes, out-of-range labels, config conflicts.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor or image dimensions incompatible with an operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Weight transfer between checkpoints and models failed.
    #[error("transfer error: {0}")]
    Transfer(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code convention: 2 for anything a caller could have
    /// validated up front, 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Shape(_) | Error::Transfer(_) | Error::Config(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

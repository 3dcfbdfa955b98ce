use std::path::{Path, PathBuf};

use crate::position::PositionError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid data in {context}: {message}")]
    Data { context: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Position(#[from] PositionError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn data(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Position(PositionError::VisionTooLong { .. }) => 2,
            Error::Data { .. } | Error::Io { .. } | Error::Position(_) => 3,
            Error::Numeric(_) | Error::Tensor(_) => 4,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

use crate::imaging::ImagingError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for data and
    /// checkpoint problems, 4 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Imaging(_) | Error::Checkpoint { .. } | Error::Io { .. } => 3,
            Error::Divergence { .. } | Error::GradCheck(_) => 4,
            Error::Tensor(TensorError::NonDeterministic { .. }) => 4,
            Error::Tensor(_) => 1,
        }
    }
}

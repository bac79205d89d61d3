use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape error on axis {axis}: {msg}")]
    Shape { axis: &'static str, msg: String },

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("fold plan error: {0}")]
    Plan(String),

    #[error("undefined surface distance: {0}")]
    UndefinedDistance(String),

    #[error("non-finite loss at epoch {epoch}, step {step} (lr {lr:e}); diagnostics in {}", dump.display())]
    NonFiniteLoss { epoch: usize, step: usize, lr: f64, dump: PathBuf },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::Network;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("degenerate batch: training-mode batch normalization needs at least 2 samples, got {0}")]
    DegenerateBatch(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged during {phase} at epoch {epoch}: {detail}")]
    Divergence {
        phase: String,
        epoch: usize,
        detail: String,
    },

    /// Divergence during curriculum refitting; carries the last network
    /// that completed an iteration.
    #[error("curriculum iteration {iteration} aborted: {source}")]
    CurriculumAbort {
        iteration: usize,
        last_good: Box<Network<f32>>,
        #[source]
        source: Box<Error>,
    },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("join error: {0}")]
    Join(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("length mismatch in {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate path: {0}")]
    DegeneratePath(String),

    #[error("sampler `{kind}` requires flow models: {reason}")]
    MissingFlow { kind: &'static str, reason: String },

    #[error("training aborted at step {step}: {reason}")]
    TrainingDiverged { step: usize, reason: String },

    #[error("run aborted at step {step}: {reason}")]
    RunAborted { step: usize, reason: String },

    #[error("bad model file: {0}")]
    ModelFormat(String),

    #[error("bad scenario or config: {0}")]
    Parse(String),

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

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("missing gradient on trainable parameter `{0}`")]
    MissingGrad(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("cannot decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("checkpoint error in {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged (non-finite loss) at step {step} of phase {phase}")]
    Diverged { phase: String, step: u64 },

    #[error("auxiliary network `{0}` changed during semi-adversarial training (freeze contract violated)")]
    UnfrozenAuxiliary(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

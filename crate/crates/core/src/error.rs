use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus incomplete: {0}")]
    CorpusIncomplete(String),

    #[error("parse error in {file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("inverse kinematics did not converge for target ({y}, {z}): residual {residual}")]
    IkFailure { y: f64, z: f64, residual: f64 },

    #[error("training diverged at epoch {epoch} (learn_rate_w={learn_rate_w}, learn_rate_pb={learn_rate_pb})")]
    Divergence {
        epoch: usize,
        learn_rate_w: f64,
        learn_rate_pb: f64,
    },

    #[error("rehearsal failed: {0}")]
    RehearsalFailed(Box<Error>),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown demo id {0}")]
    UnknownDemo(String),

    #[error("memory is empty")]
    EmptyMemory,

    #[error("snapshot version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("corrupt file {0}")]
    CorruptFile(String),

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the root cause is numerical divergence.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::RehearsalFailed(inner) => inner.is_divergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;
use std::path::PathBuf;

use tensorcore::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{what}: image size mismatch (expected {expected:?}, found {found:?})")]
    Dimension {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("corrupt weights file at record {record}: {reason}")]
    CorruptWeights { record: usize, reason: String },
    #[error("unsupported weights file version {found} (expected {expected})")]
    WeightsVersion { found: u32, expected: u32 },
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("stage {stage} ({name}) failed: {source}")]
    Stage {
        stage: usize,
        name: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the filesystem or of on-disk data, as opposed to
    /// contract or configuration errors.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Format { .. } | Error::CorruptWeights { .. } | Error::WeightsVersion { .. } | Error::BadMagic => true,
            Error::Stage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

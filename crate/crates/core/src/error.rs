use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed audio file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("unsupported audio encoding in {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },
    #[error("signal too short: {samples} samples, need at least {required}")]
    TooShort { samples: usize, required: usize },
    #[error("utterance has {frames} frame(s); normalization needs at least 2")]
    DegenerateUtterance { frames: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric failure at frequency bin {bin}: {reason}")]
    Numeric { bin: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible geometry: {0}")]
    Geometry(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

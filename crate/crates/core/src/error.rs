use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("input too short: {got} samples, need at least {need}")]
    InputTooShort { got: usize, need: usize },
    #[error("training data error: {0}")]
    TrainingData(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("no SRT: {0}")]
    NoSrt(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("WAV error at {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

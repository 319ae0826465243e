use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("ingestion error in narrative {narrative}: {message}")]
    Ingest { narrative: String, message: String },

    #[error("no narratives")]
    NoNarratives,

    #[error("missing audio files: {}", .0.join(", "))]
    MissingAudio(Vec<String>),

    #[error("audio format error in {path}: {message}")]
    AudioFormat { path: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("single-class data: {0}")]
    SingleClass(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("model is not frozen")]
    NotFrozen,

    #[error("missing checkpoint: {0}")]
    MissingArtifact(String),

    #[error("missing input artifact: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

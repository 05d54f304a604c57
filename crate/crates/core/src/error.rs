use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corpus inconsistent: {0}")]
    CorpusInconsistent(String),

    #[error("anchor {anchor_id} has {available} candidate triplets, {required} required")]
    InsufficientCandidates {
        anchor_id: String,
        available: usize,
        required: usize,
    },

    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),

    #[error("numerical fault: {0}")]
    NumericalFault(String),

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("inconsistent embedding store: {0}")]
    InconsistentStore(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("missing embedding for model {model_id}, stimulus {stimulus_id}")]
    MissingEmbedding {
        model_id: String,
        stimulus_id: String,
    },

    #[error("invalid run config: {0}")]
    Config(String),

    #[error("output directory {0} holds a different run; refusing to mix results")]
    OutputConflict(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Stable machine-readable name of the variant, used in CLI error summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::CorpusInconsistent(_) => "CorpusInconsistent",
            Error::InsufficientCandidates { .. } => "InsufficientCandidates",
            Error::BackendUnavailable(_) => "BackendUnavailable",
            Error::InvalidModelConfig(_) => "InvalidModelConfig",
            Error::NumericalFault(_) => "NumericalFault",
            Error::ParseError { .. } => "ParseError",
            Error::InconsistentStore(_) => "InconsistentStore",
            Error::DegenerateEmbedding(_) => "DegenerateEmbedding",
            Error::MissingEmbedding { .. } => "MissingEmbedding",
            Error::Config(_) => "Config",
            Error::OutputConflict(_) => "OutputConflict",
            Error::Io { .. } => "IoError",
            Error::Image { .. } => "ImageError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("target vocabulary {requested} does not exceed the character floor {floor}")]
    VocabTooSmall { requested: usize, floor: usize },

    #[error("input mode mismatch: model expects {expected}, got {got}")]
    ModeMismatch { expected: &'static str, got: &'static str },

    #[error("configuration mismatch in field `{0}`")]
    ConfigMismatch(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("missing utterance ids: {0:?}")]
    MissingIds(Vec<String>),

    #[error("missing models: {0:?}")]
    MissingModels(Vec<String>),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("training diverged at step {step}")]
    Diverged { step: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("unit index {index} outside vocabulary of size {vocab_size}")]
    UnitOutOfRange { index: u32, vocab_size: u32 },
    #[error("header speaker label is empty")]
    EmptySpeaker,
    #[error("word span starts at {start_ms} ms after it ends at {end_ms} ms")]
    InvertedSpan { start_ms: u64, end_ms: u64 },
    #[error("unknown modality {0:?}")]
    UnknownModality(String),
    #[error("cannot parse token notation {0:?}")]
    BadTokenNotation(String),
}

/// Failure reported by a model backend (scripted or real).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{backend} backend failed: {message}")]
pub struct BackendError {
    pub backend: &'static str,
    pub message: String,
}

impl BackendError {
    pub fn new(backend: &'static str, message: impl Into<String>) -> Self {
        BackendError {
            backend,
            message: message.into(),
        }
    }
}

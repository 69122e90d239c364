//! Error type shared across the engine.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// An op was given tensors whose shapes cannot be combined.
    ShapeMismatch { op: &'static str, detail: String },
    /// `backward` was called on a non-scalar tensor.
    NonScalarLoss { shape: Vec<usize> },
    /// A token id fell outside the vocabulary.
    TokenOutOfRange { id: u32, vocab: usize },
    /// A sequence (plus optional prompt slot) exceeds `max_seq_len`.
    SequenceTooLong { len: usize, max: usize },
    /// A loss was requested but no position is predicted.
    EmptyPredictionSet,
    /// Model/config validation failed.
    InvalidConfig(String),
    /// An expansion plan is inconsistent with the model it targets.
    InvalidPlan(String),
    /// Two models cannot be compared (e.g. different vocabularies).
    VocabMismatch { left: usize, right: usize },
    /// Corpus ingestion or batch assembly failed.
    Data(String),
    /// Prompt bookkeeping failed (missing domain, too few domains, ...).
    Prompt(String),
    /// Metric computation was handed invalid inputs.
    Metric(String),
    /// Training produced a non-finite loss; the stage was aborted.
    NonFiniteLoss { stage: String, step: u64 },
    /// Checkpoint bytes did not parse, or versions disagree.
    Checkpoint(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::TokenOutOfRange { id, vocab } => {
                write!(f, "token id {id} out of range for vocab {vocab}")
            }
            Error::SequenceTooLong { len, max } => {
                write!(f, "sequence length {len} exceeds max_seq_len {max}")
            }
            Error::EmptyPredictionSet => write!(f, "loss has no predicted positions"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::InvalidPlan(msg) => write!(f, "invalid expansion plan: {msg}"),
            Error::VocabMismatch { left, right } => {
                write!(f, "vocab mismatch: {left} vs {right}")
            }
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Prompt(msg) => write!(f, "prompt error: {msg}"),
            Error::Metric(msg) => write!(f, "metric error: {msg}"),
            Error::NonFiniteLoss { stage, step } => {
                write!(f, "non-finite loss at stage {stage} step {step}")
            }
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

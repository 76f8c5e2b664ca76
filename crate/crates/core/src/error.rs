//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A caller-supplied value violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation produced a NaN or infinite value.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// A vocabulary file violates its own invariants.
    #[error("corrupt vocabulary: {0}")]
    CorruptVocabulary(String),

    /// Checkpoint weights are inconsistent with the declared architecture.
    #[error("model corruption: {0}")]
    ModelCorruption(String),

    /// A layer/timestep/token selection resolved to the empty set.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    /// Ground-truth boxes cannot form a valid evaluation mask.
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),

    /// A metric is mathematically undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Input data failed validation; the message lists every offender.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A binary or text artifact does not match its documented format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

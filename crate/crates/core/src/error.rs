use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("sequence of length {len} is shorter than the required {required}")]
    SequenceTooShort { len: usize, required: usize },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("tape already consumed by an earlier backward pass")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value {value} outside the {scale} scale")]
    OutOfScale { value: f64, scale: &'static str },

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("need at least {needed} speakers, found {found}")]
    TooFewSpeakers { needed: usize, found: usize },

    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),

    #[error("fingerprint mismatch: checkpoint has {found}, expected {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("no admissible checkpoint: {0}")]
    NoAdmissibleCheckpoint(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::FingerprintMismatch { .. } | Error::ModalityMismatch(_) => {
                ErrorKind::Config
            }
            Error::NonFinite(_)
            | Error::Diverged { .. }
            | Error::UndefinedCorrelation(_)
            | Error::DegenerateTest(_)
            | Error::NoAdmissibleCheckpoint(_)
            | Error::TapeConsumed
            | Error::NotScalar(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

use thiserror::Error;

/// Coarse classification used by callers (e.g. the CLI) to map errors onto
/// exit codes: usage errors are caller mistakes, the rest are data/config
/// problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Config,
    Data,
    Domain,
    Resource,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("token {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("gamma must lie strictly inside (0, 1), got {gamma}")]
    GammaOutOfRange { gamma: f64 },

    #[error("vocabulary size must be at least 4, got {size}")]
    VocabTooSmall { size: usize },

    #[error("mask id {mask_id} collides with the real-token range [0, {vocab_size})")]
    MaskIdInRange { mask_id: u32, vocab_size: usize },

    #[error("watermark key must be exactly 16 hex digits, got {input:?}")]
    BadKeyFormat { input: String },

    #[error("sequence of {got} tokens is too short to score; need at least {min}")]
    SequenceTooShort { got: usize, min: usize },

    #[error("scored span of {got} tokens is below the minimum detection length {min}")]
    InsufficientLength { got: usize, min: usize },

    #[error(
        "detector statistics assume gamma = 0.5; got {gamma} with no matching empirical calibration"
    )]
    GammaUnsupported { gamma: f64 },

    #[error("calibration has no threshold for target FPR {fpr}")]
    ThresholdMissing { fpr: f64 },

    #[error("inverse table vocabulary cap exceeded: |V| = {vocab_size} > {cap}")]
    TableCapExceeded { vocab_size: usize, cap: usize },

    #[error("inverse table was built with a different key")]
    TableKeyMismatch,

    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::TokenOutOfRange { .. } | Error::GammaOutOfRange { .. } => ErrorKind::Domain,
            Error::VocabTooSmall { .. }
            | Error::MaskIdInRange { .. }
            | Error::BadKeyFormat { .. }
            | Error::GammaUnsupported { .. }
            | Error::ThresholdMissing { .. }
            | Error::TableKeyMismatch
            | Error::Config(_) => ErrorKind::Config,
            Error::SequenceTooShort { .. } | Error::InsufficientLength { .. } | Error::Data(_) => {
                ErrorKind::Data
            }
            Error::TableCapExceeded { .. } => ErrorKind::Resource,
            Error::Usage(_) => ErrorKind::Usage,
            Error::Io(_) | Error::Json(_) => ErrorKind::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

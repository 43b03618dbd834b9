//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Config file failed to parse.
    #[error("config error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    /// A parsed value violated a config invariant.
    #[error("validation error: {field} {msg}")]
    Validation { field: &'static str, msg: String },

    /// Dataset directory layout or sidecar problems.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Pair-list file failed to parse.
    #[error("pair parse error at line {line}: {msg}")]
    PairParse { line: usize, msg: String },

    /// Protocol-level inconsistency (fold counts, scenario flags).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An operation precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Mask anchoring produced a degenerate polygon.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Metric preconditions not met (empty or degenerate score sets).
    #[error("metric error: {0}")]
    Metric(String),

    /// Protocol scoring failed (missing image, bad pair).
    #[error("scoring error: {0}")]
    Scoring(String),

    /// Training loop failure (divergence, bad state).
    #[error("training error: {0}")]
    Training(String),

    /// Checkpoint file malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Class label outside the head's range.
    #[error("label {label} out of range [0, {num_classes})")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable one-word category for machine-parsable CLI output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ConfigParse { .. } => "config",
            Error::Validation { .. } => "validation",
            Error::Ingestion(_) => "ingestion",
            Error::PairParse { .. } => "pair-parse",
            Error::Protocol(_) => "protocol",
            Error::Contract(_) => "contract",
            Error::Geometry(_) => "geometry",
            Error::Metric(_) => "metric",
            Error::Scoring(_) => "scoring",
            Error::Training(_) => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::LabelOutOfRange { .. } => "label",
            Error::Io(_) => "io",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

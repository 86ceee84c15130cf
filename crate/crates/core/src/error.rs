//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The file is not a well-formed RIFF/WAVE container.
    #[error("malformed wav file: {0}")]
    Format(String),

    /// The container is valid but uses a feature we do not handle
    /// (multichannel audio, exotic sample encodings, ...).
    #[error("unsupported wav feature: {0}")]
    Unsupported(String),

    /// An input signal carries no usable information (all zeros, empty, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The energy decay curve never reaches the level a metric needs.
    #[error("insufficient decay: {0}")]
    InsufficientDecay(String),

    /// No energy after the 80 ms split point, so C80 is unbounded.
    #[error("infinite clarity: no energy after 80 ms")]
    InfiniteClarity,

    /// The training loss became NaN or infinite.
    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Divergence { iteration: usize },

    /// A parameter file violates its schema.
    #[error("invalid parameter file: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

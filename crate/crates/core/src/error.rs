use thiserror::Error;

/// Errors raised across the solver, sampler and experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid wave index ({k1}, {k2}) for K_max = {k_max}")]
    InvalidIndex { k1: i32, k2: i32, k_max: usize },

    #[error("resolution mismatch: K_max {left} vs {right}")]
    ResolutionMismatch { left: usize, right: usize },

    #[error("grid of size {n} is too coarse for K_max = {k_max} (need n >= {min})")]
    GridTooCoarse { n: usize, k_max: usize, min: usize },

    #[error("solver diverged at t = {time:.6}: {reason}")]
    Divergence { time: f64, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}

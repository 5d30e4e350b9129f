use thiserror::Error;

/// Errors produced by the simulation, training and data layers.
#[derive(Debug, Error)]
pub enum GbbmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A covariance (or Husimi) block failed to factorize.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("operator string of length {len} exceeds the locality cutoff {max}")]
    LocalityCutoff { len: usize, max: usize },

    #[error("{what} needs {modes} modes but the configured limit is {limit}")]
    ResourceLimit {
        what: &'static str,
        modes: usize,
        limit: usize,
    },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("numerical consistency check failed: {0}")]
    Numerical(String),

    #[error("all sampled pairs are identical (zero distance); set the kernel bandwidth manually")]
    ZeroDistance,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GbbmError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GbbmError::InvalidArgument(msg.into()))
}

use std::path::PathBuf;

use gbbm::GbbmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] GbbmError),
}

impl CliError {
    /// 2 configuration, 3 numerical failure, 4 resource limit.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                GbbmError::Diverged(_) | GbbmError::Numerical(_) | GbbmError::InvalidState(_) => 3,
                GbbmError::ResourceLimit { .. } => 4,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_error<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

pub fn io_context(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

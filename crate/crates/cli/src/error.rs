use std::path::PathBuf;

use psa_core::PsaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A config or spec file could not be read or parsed.
    #[error("{}:{line}: {msg}", origin.display())]
    Config {
        origin: PathBuf,
        line: usize,
        msg: String,
    },

    /// Arguments or configuration values that fail validation.
    #[error("invalid configuration: {0}")]
    Invalid(String),

    /// A data, score or metrics file is malformed.
    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: PsaError,
    },

    #[error(transparent)]
    Run(#[from] PsaError),

    #[error("{0}")]
    Failed(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Invalid(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

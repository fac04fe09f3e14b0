use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors surfaced to the command line, each with a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("runtime: {0}")]
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<hopkins_core::Error> for CliError {
    fn from(e: hopkins_core::Error) -> Self {
        use hopkins_core::Error as E;
        match e {
            E::Config(_) | E::Infeasible(_) => CliError::Usage(e.to_string()),
            E::Dimension { .. } | E::Index { .. } | E::Format(_) | E::Contract { .. } => {
                CliError::Data(e.to_string())
            }
            E::Numerical(_) => CliError::Runtime(e.to_string()),
        }
    }
}

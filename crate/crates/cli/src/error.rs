use std::path::Path;

use pellet::PelletError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{0}")]
    MissingInput(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(#[from] PelletError),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// 2 for anything the user can fix in the input, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(PelletError::InvalidParameter { .. }) => 2,
            CliError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

//! Command-line front end: configuration parsing, experiment orchestration,
//! bounds computation, and artifact emission.

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

/// CLI-level errors, mapped onto stable exit codes:
/// 0 success, 1 i/o, 2 configuration, 3 numeric failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("invalid configuration at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error(transparent)]
    Numeric(#[from] drpp_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema { .. } | CliError::Validation { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) | CliError::Json(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema { .. } | CliError::Validation { .. } => "config",
            CliError::Numeric(_) => "numeric",
            CliError::Io(_) | CliError::Json(_) => "io",
        }
    }
}

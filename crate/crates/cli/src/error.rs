use std::path::PathBuf;

use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const INSTABILITY: i32 = 4;
    pub const FIT: i32 = 5;
    pub const IO: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    /// Problem in a configuration file, with the offending location.
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] kipa_core::Error),
}

impl CliError {
    pub fn config(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use kipa_core::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Config { .. } => exit::VALIDATION,
            CliError::Io { .. } => exit::IO,
            CliError::Core(e) => match e {
                E::Instability(_) => exit::INSTABILITY,
                E::FitNotConverged { .. } | E::Underdetermined(_) => exit::FIT,
                E::Io(_) => exit::IO,
                E::Csv(c) if c.is_io_error() => exit::IO,
                E::Json(j) if j.is_io() => exit::IO,
                E::Csv(_) | E::Json(_) => exit::VALIDATION,
                E::Validation(_) | E::NumericalDomain(_) | E::Domain(_) | E::Configuration(_) => {
                    exit::VALIDATION
                }
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

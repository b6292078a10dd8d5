//! Command-line driver for `minsemi`: subcommands, artifact files and run
//! manifests.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 numerical
//! failure (a `diagnostic.toml` is written), 3 consistency failure.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod manifest;
pub mod plot;

use minsemi::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Mismatch(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Core(e) => match e {
                Error::Config(_)
                | Error::MissingKey(_)
                | Error::Validation(_)
                | Error::InvalidArgument(_)
                | Error::DimensionCap { .. }
                | Error::Parse { .. }
                | Error::Io(_) => 1,
                Error::Consistency(_) => 3,
                _ => 2,
            },
        }
    }

    /// Variant name, for diagnostics.
    pub fn kind(&self) -> String {
        let s = match self {
            CliError::Core(e) => format!("{e:?}"),
            other => format!("{other:?}"),
        };
        s.split(['(', ' ', '{']).next().unwrap_or_default().to_string()
    }

    /// Convergence trace carried by the error, if any.
    pub fn trace(&self) -> Option<Vec<f64>> {
        match self {
            CliError::Core(Error::NoConvergence { trace, .. }) | CliError::Core(Error::NotStabilized { trace, .. }) => {
                Some(trace.clone())
            }
            _ => None,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

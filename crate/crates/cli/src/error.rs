use std::process::ExitCode;

use lorp_core::ErrorKind;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;
pub const EXIT_COMPUTATION: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        source: lorp_core::Error,
    },
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn core(context: impl Into<String>) -> impl FnOnce(lorp_core::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Core { context, source }
    }

    pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::CheckFailed(_) => EXIT_FORMAT,
            CliError::Core { source, .. } => match source.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Format => EXIT_FORMAT,
                ErrorKind::Computation => EXIT_COMPUTATION,
            },
        })
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator.
///
/// Variants are grouped so that front ends can map them onto distinct exit
/// codes: configuration problems, bad input data, and everything else.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{file}:{line}: {message}")]
    Data { file: String, line: u64, message: String },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("atmosphere: {0}")]
    Atmosphere(String),

    #[error("{0}")]
    Runtime(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by front ends for exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Config,
            Error::Data { .. } | Error::Io { .. } => ErrorKind::Data,
            Error::InvalidParameter { .. } | Error::Atmosphere(_) | Error::Runtime(_) => ErrorKind::Runtime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

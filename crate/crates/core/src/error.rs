use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, dimension mismatch or incompatible plan.
    #[error("{0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("{0}")]
    Data(String),

    /// Non-finite values during training.
    #[error("{0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the message with `ctx`, keeping the error class.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
            Error::Io { path, source } => Error::Io {
                path,
                source: std::io::Error::new(source.kind(), format!("{ctx}: {source}")),
            },
        }
    }

    /// Short machine-readable error class.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) | Error::Io { .. } => "data",
            Error::Numerical(_) => "numerical",
        }
    }

    /// Process exit code associated with the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", path.display())]
    NotFound { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input. `offset` is the byte offset into `source` where
    /// decoding failed.
    #[error("parse error in {source_name} at byte {offset}: {message}")]
    Parse {
        source_name: String,
        offset: usize,
        message: String,
    },

    /// Data that parsed fine but violates a domain invariant.
    #[error("invalid data: {0}")]
    Validity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            offset,
            message: message.into(),
        }
    }
}

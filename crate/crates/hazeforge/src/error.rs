use std::path::PathBuf;

/// Errors produced by the hazeforge pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("failed to decode image {path}: {cause}")]
    Decode {
        path: PathBuf,
        cause: image::ImageError,
    },

    #[error("failed to encode image {path}: {cause}")]
    Encode {
        path: PathBuf,
        cause: image::ImageError,
    },

    #[error("{path}: line {line}: {message}")]
    ManifestParse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{0}")]
    Validation(String),
}

impl Error {
    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

/// A malformed binary file: which format, where, and what was wrong.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{format} format error at byte {offset}: {message}")]
pub struct FormatError {
    pub format: &'static str,
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] poco_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Error {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, source: FormatError) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Core(poco_core::Error::Contract(_)) => "contract",
            Error::Core(poco_core::Error::InvalidInput(_)) => "input",
            Error::Core(poco_core::Error::NonFinite(_)) => "non_finite",
        }
    }
}

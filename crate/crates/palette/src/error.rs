use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] palette_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    At { path: PathBuf, message: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Attaches a file path to an error that lacks one.
    pub fn context(self, path: &Path) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::At { .. }) => e,
            e => Error::At { path: path.to_path_buf(), message: e.to_string() },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

/// Errors raised by the navigation stack, the simulator and the mission runner.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("non-finite vehicle state: {0}")]
    NonFiniteState(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown object class {0}")]
    UnknownClass(u8),
    #[error("unknown world preset `{0}`")]
    UnknownPreset(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io_err(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::io_err(path, source)
}

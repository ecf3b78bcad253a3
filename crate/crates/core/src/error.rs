use std::path::PathBuf;

use qmap_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot decode {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("channel error: {0}")]
    Channel(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest row {row}: {msg}")]
    Load { row: usize, msg: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("logistic fit failed: {0}")]
    Fit(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

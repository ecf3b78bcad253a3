use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error at {layer}: {detail}")]
    Shape { layer: String, detail: String },
    #[error("state error: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err(layer: impl Into<String>, detail: impl Into<String>) -> NnError {
    NnError::Shape {
        layer: layer.into(),
        detail: detail.into(),
    }
}

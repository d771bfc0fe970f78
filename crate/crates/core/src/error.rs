use crate::tensor::Rect;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rect {rect} out of bounds for {height}x{width} tensor")]
    Bounds {
        rect: Rect,
        height: usize,
        width: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid attention config: {0}")]
    Config(String),
    #[error("malformed tensor dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

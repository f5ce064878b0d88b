use thiserror::Error;

use crate::gradcheck::GradReport;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("index ({b}, {c}, {h}, {w}) out of bounds for dims {dims:?}")]
    Index { b: usize, c: usize, h: usize, w: usize, dims: [usize; 4] },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at batch {batch}: loss = {loss}")]
    Divergence { batch: usize, loss: f64 },

    #[error("gradient check failed: {0}")]
    GradCheck(Box<GradReport>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

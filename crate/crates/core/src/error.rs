use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),

    #[error("degenerate kernel: k={k} for a {width}x{height} image")]
    DegenerateKernel { k: usize, width: usize, height: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate stroke: tracing from ({x:.2}, {y:.2}) terminated immediately")]
    DegenerateStroke { x: f32, y: f32 },

    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("pipeline is not trained for this operation: {0}")]
    Untrained(&'static str),

    #[error("phase violation: {0}")]
    PhaseViolation(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

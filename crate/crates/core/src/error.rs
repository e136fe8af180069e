use thiserror::Error;

use crate::pixel::BlockRef;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed image: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("capacity exceeded: {needed} bits requested but only {available} slots available")]
    Capacity { needed: usize, available: usize },

    #[error("quantization guard exhausted at channel {} block ({}, {})", .0.channel, .0.row, .0.col)]
    GuardExhausted(BlockRef),

    #[error("embedding did not reach a stable ROI map within {0} iterations")]
    NotConverged(usize),

    #[error("weight file: {0}")]
    Weights(String),

    #[error("model/config mismatch: {0}")]
    ModelMismatch(String),

    #[error("training data: {0}")]
    TrainingData(String),

    #[error("watermark file: {0}")]
    Watermark(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Shape(_) | Error::TrainingData(_) => 2,
            Error::Capacity { .. } | Error::GuardExhausted(_) | Error::NotConverged(_) => 3,
            Error::Weights(_) | Error::ModelMismatch(_) => 4,
            Error::Format(_) | Error::Watermark(_) | Error::Io(_) => 5,
        }
    }
}

use thiserror::Error;

use crate::explainer::ExplainError;
use crate::imgproc::ImageError;
use crate::localizer::LocalizeError;
use crate::quantizer::{FormatError, QuantError};
use crate::tensor::TensorError;
use crate::trainer::{DatasetError, TrainError};

/// Any failure surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error("{0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

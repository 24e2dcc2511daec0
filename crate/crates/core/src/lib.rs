//! Malaria blood-smear screening pipeline.
//!
//! Cell images are preprocessed ([`imgproc`]), classified by small CNNs
//! assembled from classic block families ([`netzoo`]) trained with Adam
//! ([`trainer`]), localized and counted on whole smears with an image
//! pyramid and sliding window ([`localizer`]), explained with Grad-CAM
//! ([`explainer`]), and quantized to int8 for compact deployment
//! ([`quantizer`]).

pub mod api;
pub mod error;
pub mod explainer;
pub mod gradcheck;
pub mod graph;
pub mod imgproc;
pub mod localizer;
pub mod model;
pub mod netzoo;
pub mod ops;
pub mod quantizer;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::Error;
pub use graph::{LayerGraph, LayerKind, LayerNode, Mode, NodeRef, Slot};
pub use imgproc::{Image, InputMode, PreprocessConfig};
pub use model::{CellModel, Label, Prediction};
pub use tensor::{DType, StoredTensor, Tensor, TensorError};

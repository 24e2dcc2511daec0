use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::LayerGraph;
use crate::imgproc::{build_input_tensor, Image, PreprocessConfig};
use crate::quantizer::{self, FormatError};
use crate::tensor::Tensor;

pub const DECISION_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Parasitized,
    Uninfected,
}

impl Label {
    pub fn from_probability(p: f32, threshold: f32) -> Self {
        if p >= threshold {
            Label::Parasitized
        } else {
            Label::Uninfected
        }
    }

    /// 1 for the positive (parasitized) class.
    pub fn target(self) -> f32 {
        match self {
            Label::Parasitized => 1.0,
            Label::Uninfected => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Parasitized => "parasitized",
            Label::Uninfected => "uninfected",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub probability: f32,
}

/// A classifier graph bundled with the preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct CellModel {
    pub arch: String,
    pub preprocess: PreprocessConfig,
    pub graph: LayerGraph,
}

impl CellModel {
    pub fn new(arch: impl Into<String>, preprocess: PreprocessConfig, graph: LayerGraph) -> Self {
        Self {
            arch: arch.into(),
            preprocess,
            graph,
        }
    }

    pub fn input_tensor(&self, image: &Image) -> Result<Tensor<f32>, Error> {
        Ok(build_input_tensor(image, &self.preprocess)?)
    }

    /// Parasitized probability for each item of a (N, C, H, W) batch.
    pub fn probabilities(&self, batch: &Tensor<f32>) -> Result<Vec<f32>, Error> {
        Ok(self.graph.forward(batch)?.into_data())
    }

    pub fn predict(&self, image: &Image) -> Result<Prediction, Error> {
        let p = self.probabilities(&self.input_tensor(image)?)?[0];
        Ok(Prediction {
            label: Label::from_probability(p, DECISION_THRESHOLD),
            probability: p,
        })
    }

    pub fn quantized(&self) -> Result<CellModel, Error> {
        Ok(CellModel {
            graph: quantizer::quantize_model(&self.graph)?,
            ..self.clone()
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        quantizer::serialize_model(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        quantizer::read_model(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64, FormatError> {
        quantizer::write_model(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        quantizer::load_model(path)
    }
}

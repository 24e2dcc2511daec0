//! JSON bodies exchanged between the HTTP service and its clients.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::imgproc::InputMode;
use crate::localizer::Detection;
use crate::model::{Label, Prediction};
use crate::quantizer::BenchReport;
use crate::trainer::{EpochRecord, Metrics};

/// Body of every non-2xx response. `error` is a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirmed,
    Overridden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub reviewed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub verdict: Verdict,
    #[serde(default)]
    pub note: Option<String>,
}

/// One screened upload. Ids sort by creation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub created_at: DateTime<Utc>,
    /// SHA-256 of the uploaded bytes, lowercase hex.
    pub image_hash: String,
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<Detection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<Review>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub case_id: String,
    pub label: Label,
    pub probability: f32,
    pub image_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeResponse {
    pub case_id: String,
    pub count: usize,
    pub detections: Vec<Detection>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseList {
    pub cases: Vec<CaseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub path: Option<PathBuf>,
    pub arch: String,
    pub input_mode: InputMode,
    pub params: usize,
    pub quantized: bool,
    pub conv_layers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: Option<ModelInfo>,
    pub localizer: Option<ModelInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    /// Folder with `Parasitized/` and `Uninfected/`; ignored for the window arch.
    #[serde(default)]
    pub data: Option<PathBuf>,
    pub arch: String,
    pub out: PathBuf,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub input_mode: Option<InputMode>,
    #[serde(default)]
    pub learning_rate: Option<f32>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Stratified subset of the dataset to train on.
    #[serde(default)]
    pub subset: Option<usize>,
    #[serde(default)]
    pub augment_flips: bool,
    /// Generated smears used to train the `window` localizer model.
    #[serde(default)]
    pub synthetic_composites: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model: PathBuf,
    pub history_csv: Option<PathBuf>,
    pub size_bytes: u64,
    pub params: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub validation: Metrics,
    pub train_items: usize,
    pub val_items: usize,
    pub skipped: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub model: PathBuf,
    pub data: PathBuf,
    /// When set, evaluate only the validation side of this stratified split.
    #[serde(default)]
    pub split_ratio: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threshold: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub metrics: Metrics,
    pub items: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeRequest {
    pub model: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeResponse {
    pub out: PathBuf,
    pub float_bytes: u64,
    pub int8_bytes: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub models: Vec<PathBuf>,
    pub data: PathBuf,
    #[serde(default)]
    pub repetitions: Option<usize>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// Stratified subset of the dataset to score.
    #[serde(default)]
    pub subset: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResponse {
    pub reports: Vec<BenchReport>,
}

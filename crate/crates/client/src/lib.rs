//! Thin async client for the screening service's HTTP/JSON API.

use std::path::Path;

use plasmo_core::api::{
    BenchRequest, BenchResponse, CaseList, CaseRecord, ClassifyResponse, ErrorBody, EvalRequest, EvalResponse, Health,
    LocalizeResponse, ModelInfo, QuantizeRequest, QuantizeResponse, ReviewRequest, TrainRequest, TrainResponse,
};
use reqwest::{RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{status}: {} ({})", body.message, body.error)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }

    /// Stable error code from the server, when the server answered.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Options for the explain endpoint.
#[derive(Debug, Clone, Default)]
pub struct ExplainOptions {
    pub model: Option<String>,
    pub layer: Option<String>,
    pub alpha: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, such as `http://127.0.0.1:8750`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn checked(req: RequestBuilder) -> Result<Response> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str::<ErrorBody>(&text).unwrap_or(ErrorBody {
            error: "http_error".into(),
            message: text,
            available: None,
        });
        Err(ClientError::Api { status, body })
    }

    async fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        let bytes = Self::checked(req).await?.bytes().await?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn raw(req: RequestBuilder) -> Result<Vec<u8>> {
        Ok(Self::checked(req).await?.bytes().await?.to_vec())
    }

    fn upload(&self, path: &str, image: Vec<u8>, query: &[(&str, String)]) -> RequestBuilder {
        self.http
            .post(self.url(path))
            .query(query)
            .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
            .body(image)
    }

    fn post_json(&self, path: &str, body: &impl Serialize) -> RequestBuilder {
        self.http.post(self.url(path)).json(body)
    }

    pub async fn health(&self) -> Result<Health> {
        Self::json(self.http.get(self.url("/api/health"))).await
    }

    pub async fn model_info(&self, model: Option<&str>) -> Result<ModelInfo> {
        Self::json(self.http.get(self.url("/api/model")).query(&model_query(model))).await
    }

    pub async fn classify(&self, image: Vec<u8>, model: Option<&str>) -> Result<ClassifyResponse> {
        Self::json(self.upload("/api/classify", image, &model_query(model))).await
    }

    /// Sends the image as a multipart form with an `image` part.
    pub async fn classify_multipart(&self, image: Vec<u8>, file_name: &str) -> Result<ClassifyResponse> {
        let part = reqwest::multipart::Part::bytes(image).file_name(file_name.to_string());
        let form = reqwest::multipart::Form::new().part("image", part);
        Self::json(self.http.post(self.url("/api/classify")).multipart(form)).await
    }

    pub async fn localize(&self, image: Vec<u8>, model: Option<&str>, case_id: Option<&str>) -> Result<LocalizeResponse> {
        let mut q = model_query(model);
        if let Some(id) = case_id {
            q.push(("case_id", id.to_string()));
        }
        Self::json(self.upload("/api/localize", image, &q)).await
    }

    fn explain_query(opts: &ExplainOptions, format: &str) -> Vec<(&'static str, String)> {
        let mut q = model_query(opts.model.as_deref());
        if let Some(l) = &opts.layer {
            q.push(("layer", l.clone()));
        }
        if let Some(a) = opts.alpha {
            q.push(("alpha", a.to_string()));
        }
        q.push(("format", format.to_string()));
        q
    }

    /// Grad-CAM overlay as PNG bytes.
    pub async fn explain_png(&self, image: Vec<u8>, opts: &ExplainOptions) -> Result<Vec<u8>> {
        Self::raw(self.upload("/api/explain", image, &Self::explain_query(opts, "png"))).await
    }

    /// Normalized heatmap as CSV rows.
    pub async fn explain_csv(&self, image: Vec<u8>, opts: &ExplainOptions) -> Result<String> {
        let bytes = Self::raw(self.upload("/api/explain", image, &Self::explain_query(opts, "csv"))).await?;
        String::from_utf8(bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// One preprocessing stage (`resized`, `blurred` or `edges`) as PNG bytes.
    pub async fn preprocess(&self, image: Vec<u8>, stage: &str, model: Option<&str>) -> Result<Vec<u8>> {
        let mut q = model_query(model);
        q.push(("stage", stage.to_string()));
        Self::raw(self.upload("/api/preprocess", image, &q)).await
    }

    pub async fn cases(&self, limit: Option<usize>) -> Result<CaseList> {
        let q: Vec<(&str, String)> = limit.map(|l| ("limit", l.to_string())).into_iter().collect();
        Self::json(self.http.get(self.url("/api/cases")).query(&q)).await
    }

    pub async fn case(&self, id: &str) -> Result<CaseRecord> {
        Self::json(self.http.get(self.url(&format!("/api/cases/{id}")))).await
    }

    pub async fn review(&self, id: &str, review: &ReviewRequest) -> Result<CaseRecord> {
        Self::json(self.post_json(&format!("/api/cases/{id}/review"), review)).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<TrainResponse> {
        Self::json(self.post_json("/api/train", req)).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalResponse> {
        Self::json(self.post_json("/api/eval", req)).await
    }

    pub async fn quantize(&self, req: &QuantizeRequest) -> Result<QuantizeResponse> {
        Self::json(self.post_json("/api/quantize", req)).await
    }

    pub async fn bench(&self, req: &BenchRequest) -> Result<BenchResponse> {
        Self::json(self.post_json("/api/bench", req)).await
    }
}

fn model_query(model: Option<&str>) -> Vec<(&'static str, String)> {
    model.map(|m| ("model", m.to_string())).into_iter().collect()
}

/// Absolute form of a local path, for `?model=` arguments the server resolves.
pub fn server_path(path: &Path) -> String {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}

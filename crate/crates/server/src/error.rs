use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use plasmo_core::api::ErrorBody;
use plasmo_core::explainer::ExplainError;
use plasmo_core::imgproc::ImageError;
use plasmo_core::localizer::LocalizeError;
use plasmo_core::quantizer::FormatError;
use plasmo_core::Error as CoreError;

use crate::store::StoreError;

/// An HTTP error with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub available: Option<Vec<String>>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            available: None,
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn with_available(mut self, available: Vec<String>) -> Self {
        self.available = Some(available);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = ErrorBody {
            error: self.code.to_string(),
            message: self.message,
            available: self.available,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<ImageError> for ApiError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Format(_) => ApiError::bad_request("invalid_image", e.to_string()),
            ImageError::Param(_) => ApiError::bad_request("invalid_parameter", e.to_string()),
            ImageError::Io(_) => ApiError::bad_request("unreadable_file", e.to_string()),
            ImageError::Dims { .. } => ApiError::internal(e.to_string()),
        }
    }
}

impl From<ExplainError> for ApiError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::UnknownLayer { ref available, .. } => {
                let available = available.clone();
                ApiError::not_found("unknown_layer", e.to_string()).with_available(available)
            }
            ExplainError::NotConv(_) => ApiError::bad_request("not_conv_layer", e.to_string()),
            ExplainError::NoConvLayer | ExplainError::NoLogit => ApiError::bad_request("unsupported_model", e.to_string()),
            ExplainError::Image(e) => e.into(),
            ExplainError::DimMismatch { .. } | ExplainError::Tensor(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<LocalizeError> for ApiError {
    fn from(e: LocalizeError) -> Self {
        match e {
            LocalizeError::TooSmall { .. } | LocalizeError::WindowTooLarge { .. } => {
                ApiError::bad_request("image_too_small", e.to_string())
            }
            LocalizeError::Config(_) => ApiError::bad_request("invalid_parameter", e.to_string()),
            LocalizeError::Image(e) => e.into(),
            LocalizeError::Tensor(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => {
                ApiError::not_found("model_not_found", e.to_string())
            }
            _ => ApiError::bad_request("invalid_model", e.to_string()),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Image(e) => e.into(),
            CoreError::Explain(e) => e.into(),
            CoreError::Localize(e) => e.into(),
            CoreError::Format(e) => e.into(),
            CoreError::Dataset(_) => ApiError::bad_request("invalid_dataset", e.to_string()),
            CoreError::Invalid(_) => ApiError::bad_request("invalid_parameter", e.to_string()),
            CoreError::Train(plasmo_core::trainer::TrainError::Config(_)) => {
                ApiError::bad_request("invalid_parameter", e.to_string())
            }
            CoreError::Io(_) => ApiError::bad_request("unreadable_file", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::not_found("case_not_found", e.to_string()),
            StoreError::AlreadyReviewed(_) => ApiError::new(StatusCode::CONFLICT, "already_reviewed", e.to_string()),
            StoreError::Io(_) | StoreError::Encode(_) => ApiError::internal(e.to_string()),
        }
    }
}

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Request};
use axum::http::{header, StatusCode};

use crate::error::ApiError;

/// Uploaded image bytes: the `image` part of a multipart form (else its
/// first part), or the raw request body for any other content type.
pub struct Upload(pub Bytes);

fn body_error(status: StatusCode, detail: String) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "payload_too_large", detail)
    } else {
        ApiError::bad_request("invalid_upload", detail)
    }
}

impl<S: Send + Sync> FromRequest<S> for Upload {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let multipart = req
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("multipart/form-data"));
        let bytes = if multipart {
            let mut form = Multipart::from_request(req, state)
                .await
                .map_err(|e| body_error(e.status(), e.body_text()))?;
            let mut found = None;
            while let Some(field) = form.next_field().await.map_err(|e| body_error(e.status(), e.body_text()))? {
                let named = field.name() == Some("image");
                if named || found.is_none() {
                    found = Some(field.bytes().await.map_err(|e| body_error(e.status(), e.body_text()))?);
                    if named {
                        break;
                    }
                }
            }
            found.ok_or_else(|| ApiError::bad_request("invalid_upload", "multipart form has no file part"))?
        } else {
            Bytes::from_request(req, state)
                .await
                .map_err(|e| body_error(e.status(), e.body_text()))?
        };
        if bytes.is_empty() {
            return Err(ApiError::bad_request("invalid_upload", "empty upload"));
        }
        Ok(Upload(bytes))
    }
}

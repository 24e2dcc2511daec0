use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use plasmo_core::api::{
    BenchRequest, CaseList, CaseRecord, ClassifyResponse, EvalRequest, Health, LocalizeResponse, ModelInfo,
    QuantizeRequest, ReviewRequest, TrainRequest,
};
use plasmo_core::explainer::explain_image;
use plasmo_core::imgproc::{decode_image, preprocess_stages, Image};
use plasmo_core::localizer::detect_cells;
use plasmo_core::model::DECISION_THRESHOLD;
use plasmo_core::{Label, Prediction};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::ApiError;
use crate::jobs;
use crate::state::{AppState, LoadedModel};
use crate::upload::Upload;

type AppResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

const DEFAULT_LIST_LIMIT: usize = 50;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = DefaultBodyLimit::max(state.config.max_upload_bytes);
    let uploads = Router::new()
        .route("/api/classify", post(classify))
        .route("/api/localize", post(localize))
        .route("/api/explain", post(explain))
        .route("/api/preprocess", post(preprocess))
        .layer(limit);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/model", get(model_info))
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{id}", get(get_case))
        .route("/api/cases/{id}/review", post(review_case))
        .route("/api/train", post(train))
        .route("/api/eval", post(eval))
        .route("/api/quantize", post(quantize))
        .route("/api/bench", post(bench))
        .merge(uploads)
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn png(image: &Image) -> AppResult<Response> {
    Ok(([(header::CONTENT_TYPE, "image/png")], image.encode_png()?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct ModelQuery {
    model: Option<PathBuf>,
}

async fn health(State(state): Shared) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model: state.default_model().map(|m| m.info()),
        localizer: state.localizer_model().map(|m| m.info()),
    })
}

async fn model_info(State(state): Shared, Query(q): Query<ModelQuery>) -> AppResult<Json<ModelInfo>> {
    let state2 = state.clone();
    let m = blocking(move || state2.resolve(q.model.as_deref(), state2.default_model())).await?;
    Ok(Json(m.info()))
}


async fn classify(State(state): Shared, Query(q): Query<ModelQuery>, Upload(bytes): Upload) -> AppResult<Json<ClassifyResponse>> {
    let st = state.clone();
    let (prediction, hash) = blocking(move || {
        let m = st.resolve(q.model.as_deref(), st.default_model())?;
        let hash = sha256_hex(&bytes);
        let image = decode_image(&bytes)?;
        Ok((m.model.predict(&image)?, hash))
    })
    .await?;
    let record = state.store.create(hash.clone(), prediction, None).await?;
    Ok(Json(ClassifyResponse {
        case_id: record.id,
        label: prediction.label,
        probability: prediction.probability,
        image_hash: hash,
    }))
}

#[derive(Debug, Deserialize)]
struct LocalizeQuery {
    model: Option<PathBuf>,
    case_id: Option<String>,
}

async fn localize(State(state): Shared, Query(q): Query<LocalizeQuery>, Upload(bytes): Upload) -> AppResult<Json<LocalizeResponse>> {
    if let Some(id) = &q.case_id {
        if state.store.get(id).await.is_none() {
            return Err(ApiError::not_found("case_not_found", format!("no case {id}")));
        }
    }
    let st = state.clone();
    let model = q.model.clone();
    let (found, hash, width, height) = blocking(move || {
        let m = st.resolve(model.as_deref(), st.localizer_model())?;
        let hash = sha256_hex(&bytes);
        let image = decode_image(&bytes)?;
        let found = detect_cells(&image, &m.model, &st.config.localize)?;
        Ok((found, hash, image.width(), image.height()))
    })
    .await?;
    let record = match q.case_id {
        Some(id) => state.store.attach_detections(&id, found.detections.clone()).await?,
        None => {
            let probability = found.detections.iter().map(|d| d.score).fold(0.0f32, f32::max);
            let prediction = Prediction {
                label: Label::from_probability(probability, DECISION_THRESHOLD),
                probability,
            };
            state.store.create(hash, prediction, Some(found.detections.clone())).await?
        }
    };
    Ok(Json(LocalizeResponse {
        case_id: record.id,
        count: found.count,
        detections: found.detections,
        width,
        height,
    }))
}

#[derive(Debug, Deserialize)]
struct ExplainQuery {
    model: Option<PathBuf>,
    layer: Option<String>,
    alpha: Option<f32>,
    format: Option<String>,
}

async fn explain(State(state): Shared, Query(q): Query<ExplainQuery>, Upload(bytes): Upload) -> AppResult<Response> {
    let csv = match q.format.as_deref() {
        None | Some("png") => false,
        Some("csv") => true,
        Some(other) => {
            return Err(ApiError::bad_request("invalid_parameter", format!("unknown format {other:?}"))
                .with_available(vec!["png".into(), "csv".into()]))
        }
    };
    let alpha = q.alpha.unwrap_or(state.config.default_alpha);
    if !alpha.is_finite() {
        return Err(ApiError::bad_request("invalid_parameter", "alpha must be a number"));
    }
    let st = state.clone();
    blocking(move || {
        let m = st.resolve(q.model.as_deref(), st.default_model())?;
        let image = decode_image(&bytes)?;
        let (heat, overlay) = explain_image(&m.model, &image, q.layer.as_deref(), alpha.clamp(0.0, 1.0))?;
        if csv {
            let mut out = Vec::new();
            heat.write_csv(&mut out).map_err(|e| ApiError::internal(e.to_string()))?;
            Ok(([(header::CONTENT_TYPE, "text/csv")], out).into_response())
        } else {
            png(&overlay)
        }
    })
    .await
}

#[derive(Debug, Deserialize)]
struct PreprocessQuery {
    model: Option<PathBuf>,
    stage: Option<String>,
}

async fn preprocess(State(state): Shared, Query(q): Query<PreprocessQuery>, Upload(bytes): Upload) -> AppResult<Response> {
    let st = state.clone();
    blocking(move || {
        let config = match q.model.as_deref() {
            None => st.default_model().map(|m| m.model.preprocess).unwrap_or_default(),
            Some(p) => st.resolve(Some(p), None)?.model.preprocess,
        };
        let stages = preprocess_stages(&decode_image(&bytes)?, &config)?;
        match q.stage.as_deref().unwrap_or("edges") {
            "resized" => png(&stages.resized),
            "blurred" => png(&stages.blurred),
            "edges" => png(&stages.edges),
            other => Err(ApiError::bad_request("invalid_parameter", format!("unknown stage {other:?}"))
                .with_available(vec!["resized".into(), "blurred".into(), "edges".into()])),
        }
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    limit: Option<usize>,
}

async fn list_cases(State(state): Shared, Query(q): Query<ListQuery>) -> Json<CaseList> {
    Json(CaseList {
        cases: state.store.list(q.limit.unwrap_or(DEFAULT_LIST_LIMIT)).await,
    })
}

async fn get_case(State(state): Shared, UrlPath(id): UrlPath<String>) -> AppResult<Json<CaseRecord>> {
    state
        .store
        .get(&id)
        .await
        .map(Json)
        .ok_or_else(|| ApiError::not_found("case_not_found", format!("no case {id}")))
}

async fn review_case(
    State(state): Shared,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ReviewRequest>,
) -> AppResult<Json<CaseRecord>> {
    Ok(Json(state.store.review(&id, req).await?))
}

async fn train(Json(req): Json<TrainRequest>) -> AppResult<Response> {
    let res = blocking(move || jobs::train_model(&req)).await?;
    Ok(Json(res).into_response())
}

async fn eval(State(state): Shared, Json(req): Json<EvalRequest>) -> AppResult<Response> {
    let res = blocking(move || {
        let m = state.resolve(Some(&req.model), None)?;
        jobs::evaluate(&m.model, &req)
    })
    .await?;
    Ok(Json(res).into_response())
}

async fn quantize(State(state): Shared, Json(req): Json<QuantizeRequest>) -> AppResult<Response> {
    let res = blocking(move || {
        let m = state.resolve(Some(&req.model), None)?;
        jobs::quantize(&m.model, &req)
    })
    .await?;
    Ok(Json(res).into_response())
}

async fn bench(State(state): Shared, Json(req): Json<BenchRequest>) -> AppResult<Response> {
    if req.models.is_empty() {
        return Err(ApiError::bad_request("invalid_parameter", "bench needs at least one model"));
    }
    let res = blocking(move || {
        let models = req
            .models
            .iter()
            .map(|p| Ok((p.clone(), state.resolve(Some(p), None)?)))
            .collect::<AppResult<Vec<(PathBuf, Arc<LoadedModel>)>>>()?;
        jobs::bench(&models, &req)
    })
    .await?;
    Ok(Json(res).into_response())
}

//! HTTP layer of the DSIS rating service.
//!
//! | method | path                        | body / result                         |
//! |--------|-----------------------------|---------------------------------------|
//! | POST   | `/sessions`                 | `{rater_id, cohort, seed?}` -> 201    |
//! | GET    | `/sessions/:id/next`        | next unrated stimulus and progress    |
//! | POST   | `/sessions/:id/ratings`     | `{stimulus_id, scale, percent}` -> 201|
//! | GET    | `/results/summary`          | MOS per cohort x class, decoy check   |
//! | GET    | `/results/export`           | all ratings as CSV                    |
//! | GET    | `/scale`                    | the five impairment-scale labels      |
//! | GET    | `/stimuli/*path`            | pool images (listed files only)       |
//!
//! Errors are `{"error": <code>, "message": <text>}`.

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use nsb_core::dsis::{
    Cohort, CohortSummary, DecoySensitivity, DsisError, RaterProfile, SharedEngine, SCALE_LABELS,
};

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code: "invalid_request", message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, code: "not_found", message: message.into() }
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl From<DsisError> for ApiError {
    fn from(e: DsisError) -> Self {
        let status = match &e {
            DsisError::UnknownSession(_) | DsisError::UnknownStimulus { .. } => StatusCode::NOT_FOUND,
            DsisError::Duplicate { .. } => StatusCode::CONFLICT,
            DsisError::ScaleRange(_) | DsisError::PercentRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
            DsisError::NoDecoys => StatusCode::CONFLICT,
            DsisError::InsufficientPool { .. } | DsisError::PlanConfig(_) => StatusCode::SERVICE_UNAVAILABLE,
            DsisError::Pool(_) | DsisError::Corrupt { .. } | DsisError::Csv(_) | DsisError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self { status, code: e.code(), message: e.to_string() }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.code.to_string(), message: self.message })).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub rater_id: String,
    pub cohort: Cohort,
    /// Presentation-order seed; defaults to the current time.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RatingRequest {
    pub stimulus_id: String,
    /// Signed so that out-of-range values reach validation (422) rather
    /// than failing deserialization.
    pub scale: i64,
    pub percent: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryResponse {
    pub summary: CohortSummary,
    /// `None` until at least one decoy has been rated.
    pub decoy_sensitivity: Option<Vec<DecoySensitivity>>,
}

pub fn router(engine: SharedEngine) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id/next", get(next_stimulus))
        .route("/sessions/:id/ratings", post(submit_rating))
        .route("/results/summary", get(summary))
        .route("/results/export", get(export))
        .route("/scale", get(scale))
        .route("/stimuli/*path", get(stimulus_file))
        .with_state(engine)
}

async fn create_session(
    State(engine): State<SharedEngine>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    if req.rater_id.trim().is_empty() {
        return Err(ApiError::bad_request("rater_id must not be empty"));
    }
    let seed = req.seed.unwrap_or_else(|| {
        use nsb_core::dsis::Clock;
        nsb_core::dsis::SystemClock.now_ms()
    });
    let created = engine.lock().create_session(RaterProfile { rater_id: req.rater_id, cohort: req.cohort }, seed)?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn next_stimulus(State(engine): State<SharedEngine>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(engine.lock().next_stimulus(&id)?))
}

async fn submit_rating(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    body: Result<Json<RatingRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let record = engine.lock().submit_rating(&id, &req.stimulus_id, req.scale, req.percent)?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn summary(State(engine): State<SharedEngine>) -> Json<SummaryResponse> {
    let e = engine.lock();
    Json(SummaryResponse { summary: e.summary(), decoy_sensitivity: e.decoy_sensitivity().ok() })
}

async fn export(State(engine): State<SharedEngine>) -> Result<impl IntoResponse, ApiError> {
    let mut buf = Vec::new();
    engine.lock().export(&mut buf)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf))
}

async fn scale() -> Json<Vec<ScaleLevel>> {
    Json(SCALE_LABELS.iter().enumerate().map(|(i, l)| ScaleLevel { value: i as u8 + 1, label: l }).collect())
}

#[derive(Serialize)]
struct ScaleLevel {
    value: u8,
    label: &'static str,
}

/// Serves only files the pool lists as a reference or processed image.
async fn stimulus_file(State(engine): State<SharedEngine>, Path(path): Path<String>) -> Result<Response, ApiError> {
    let file = {
        let e = engine.lock();
        let pool = e.pool();
        let listed = pool.iter().flat_map(|s| [&s.reference, &s.processed]).find(|p| {
            let parts: Vec<String> = p.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            parts.join("/") == path
        });
        listed.map(|p| pool.resolve(p))
    };
    let file = file.ok_or_else(|| ApiError::not_found(format!("no stimulus file {path}")))?;
    let bytes = tokio::fs::read(&file).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "io",
        message: e.to_string(),
    })?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response())
}

//! JSON-over-HTTP routes for students and instructors.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tracing::error;

use crate::questions::{PrecomputeStatus, QuestionEntry};
use crate::tutor::{FeedbackRequest, Tutor, TutorError};

#[derive(Clone)]
pub struct AppState {
    pub tutor: Arc<Tutor>,
    /// Bearer token for `/v1/admin/*`. Admin routes answer 403 when unset.
    pub admin_token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(tutor: Arc<Tutor>, admin_token: Option<String>) -> Self {
        AppState {
            tutor,
            admin_token: admin_token.map(Arc::from),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
    retry_after: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: kind.to_string(),
                message: message.into(),
                trace_id: None,
            },
            retry_after: None,
        }
    }
}

impl From<TutorError> for ApiError {
    fn from(err: TutorError) -> Self {
        let status = match &err {
            TutorError::InvalidRequest(_)
            | TutorError::Source(_)
            | TutorError::UnknownWorkflow { .. } => StatusCode::BAD_REQUEST,
            TutorError::UnknownQuestion(_) | TutorError::UnknownTrace(_) => StatusCode::NOT_FOUND,
            TutorError::NotReady { .. } => StatusCode::CONFLICT,
            TutorError::QuotaExhausted { .. } => StatusCode::TOO_MANY_REQUESTS,
            TutorError::Flagged { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            TutorError::ModerationUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            TutorError::Engine { .. } | TutorError::Setup(_) | TutorError::Store(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            error!(error = %err, "request failed");
        }
        let mut api = ApiError::new(status, err.kind(), err.public_message());
        match err {
            TutorError::Flagged { trace_id, .. } | TutorError::Engine { trace_id } => {
                api.body.trace_id = Some(trace_id);
            }
            TutorError::QuotaExhausted { retry_after_secs } => {
                api.retry_after = Some(retry_after_secs);
            }
            _ => {}
        }
        api
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut response = (self.status, Json(self.body)).into_response();
        if let Some(secs) = self.retry_after {
            response
                .headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        response
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Run blocking tutor work off the async executor.
async fn blocking<T, F>(tutor: &Arc<Tutor>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Tutor) -> Result<T, TutorError> + Send + 'static,
{
    let tutor = Arc::clone(tutor);
    match tokio::task::spawn_blocking(move || f(&tutor)).await {
        Ok(result) => result.map(Json).map_err(ApiError::from),
        Err(join) => {
            error!(error = %join, "worker task failed");
            Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "internal",
                "internal error",
            ))
        }
    }
}

/// Student-facing view of a question; model context stays server-side.
#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionView {
    pub question_id: String,
    pub display_text: String,
    pub precompute_status: PrecomputeStatus,
}

impl From<QuestionEntry> for QuestionView {
    fn from(entry: QuestionEntry) -> Self {
        QuestionView {
            question_id: entry.question_id,
            display_text: entry.display_text,
            precompute_status: entry.precompute_status,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestBody {
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PrecomputeView {
    pub question: QuestionEntry,
    pub new_cache_entries: usize,
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn list_questions(State(state): State<AppState>) -> ApiResult<Vec<QuestionView>> {
    blocking(&state.tutor, |t| {
        Ok(t.questions()?.into_iter().map(QuestionView::from).collect())
    })
    .await
}

async fn get_question(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<QuestionView> {
    blocking(&state.tutor, move |t| t.question(&id).map(QuestionView::from)).await
}

async fn submit(
    State(state): State<AppState>,
    body: Result<Json<FeedbackRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<crate::tutor::FeedbackResponse>, ApiError> {
    let Json(request) =
        body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?;
    blocking(&state.tutor, move |t| t.submit(&request)).await
}

async fn quota(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
) -> Json<crate::tutor::QuotaStatus> {
    Json(state.tutor.quota(&user_id))
}

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(expected) = &state.admin_token else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "admin endpoints are disabled",
        ));
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(token) if constant_time_eq(token.as_bytes(), expected.as_bytes()) => Ok(()),
        _ => Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong admin token",
        )),
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn admin_ingest(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<IngestBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<crate::tutor::IngestReport> {
    authorize(&state, &headers)?;
    let Json(body) =
        body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?;
    blocking(&state.tutor, move |t| t.ingest(&body.source)).await
}

async fn admin_precompute(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<PrecomputeView> {
    authorize(&state, &headers)?;
    blocking(&state.tutor, move |t| {
        let (question, new_cache_entries) = t.precompute_question(&id)?;
        Ok(PrecomputeView {
            question,
            new_cache_entries,
        })
    })
    .await
}

async fn admin_trace(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(trace_id): Path<String>,
) -> ApiResult<crate::tutor::TraceRecord> {
    authorize(&state, &headers)?;
    blocking(&state.tutor, move |t| t.trace(&trace_id)).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/questions", get(list_questions))
        .route("/v1/questions/:id", get(get_question))
        .route("/v1/feedback", post(submit))
        .route("/v1/quota/:user_id", get(quota))
        .route("/v1/admin/ingest", post(admin_ingest))
        .route("/v1/admin/precompute/:id", post(admin_precompute))
        .route("/v1/admin/trace/:trace_id", get(admin_trace))
        .with_state(state)
}

//! HTTP routes.
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | POST | `/api/sessions` | none; returns `{"session_id"}` |
//! | POST | `/api/sessions/{id}/chat` | `{"text"}`; returns the turn |
//! | POST | `/api/sessions/{id}/upload` | CSV bytes; returns the turn and ingest report |
//! | GET | `/api/sessions/{id}/export` | CSV attachment; row and column counts in `X-Export-Summary` |
//! | GET | `/api/health`, `/health` | liveness |

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use http_body_util::{BodyExt, LengthLimitError, Limited};
use pubbie_core::orchestrator::{ChatTurn, Orchestrator};
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};

use crate::error::ApiError;

/// Longest accepted chat message, in bytes.
pub const MAX_TEXT_BYTES: usize = 8 * 1024;

pub struct AppState {
    pub orchestrator: Arc<Orchestrator>,
    /// Include stage traces in turn responses.
    pub debug: bool,
    pub max_upload_bytes: u64,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/:id/chat", post(chat))
        .route(
            "/api/sessions/:id/upload",
            post(upload).layer(DefaultBodyLimit::disable()),
        )
        .route("/api/sessions/:id/export", get(export))
        .route("/api/health", get(api_health))
        .route("/health", get(|| async { "ok" }))
        .fallback(|| async {
            ApiError {
                code: "NOT_FOUND",
                message: "no such endpoint".into(),
                retryable: false,
                status: StatusCode::NOT_FOUND,
            }
        })
        .with_state(state)
}

/// Runs blocking orchestrator work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        tracing::error!(error = %e, "worker task failed");
        ApiError::internal()
    })?
}

fn turn_json(turn: &ChatTurn, debug: bool) -> JsonValue {
    let mut value = serde_json::to_value(turn).expect("turns serialize");
    if !debug {
        if let Some(obj) = value.as_object_mut() {
            obj.remove("stage_trace");
        }
    }
    value
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let o = state.orchestrator.clone();
    let id = blocking(move || o.create_session().map_err(ApiError::from)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

#[derive(Deserialize)]
struct ChatRequest {
    text: String,
}

async fn chat(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<JsonValue>, ApiError> {
    let request: ChatRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("expected {{\"text\": ...}}: {e}")))?;
    if request.text.len() > MAX_TEXT_BYTES {
        return Err(ApiError::text_too_long(MAX_TEXT_BYTES));
    }
    if request.text.trim().is_empty() {
        return Err(ApiError::empty_text());
    }
    let o = state.orchestrator.clone();
    let turn = blocking(move || o.handle_turn(&id, &request.text).map_err(ApiError::from)).await?;
    Ok(Json(turn_json(&turn, state.debug)))
}

fn is_csv_type(headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(value) = headers.get(header::CONTENT_TYPE) else {
        return Ok(());
    };
    let mime = value.to_str().unwrap_or("").split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    match mime.as_str() {
        "text/csv" | "application/csv" | "text/plain" | "application/octet-stream" | "" => Ok(()),
        _ => Err(ApiError::unsupported_media_type(&mime)),
    }
}

async fn upload(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Body,
) -> Result<Json<JsonValue>, ApiError> {
    is_csv_type(&headers)?;
    let limit = state.max_upload_bytes;
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    if declared.is_some_and(|n| n > limit) {
        return Err(ApiError::payload_too_large(limit));
    }
    // Streams with a running count, so an undeclared oversize body is cut
    // off at the limit.
    let bytes = match Limited::new(body, limit as usize).collect().await {
        Ok(collected) => collected.to_bytes(),
        Err(e) if e.downcast_ref::<LengthLimitError>().is_some() => {
            return Err(ApiError::payload_too_large(limit))
        }
        Err(e) => return Err(ApiError::bad_request(format!("could not read the upload: {e}"))),
    };
    let o = state.orchestrator.clone();
    let (turn, report) = blocking(move || o.run_ingest_workflow(&id, &bytes).map_err(ApiError::from)).await?;
    let mut value = turn_json(&turn, state.debug);
    value["report"] = serde_json::to_value(report).expect("reports serialize");
    Ok(Json(value))
}

/// Header-safe copy of free text.
fn header_text(text: &str) -> HeaderValue {
    let clean: String = text
        .chars()
        .map(|c| if c.is_ascii_graphic() || c == ' ' { c } else { ' ' })
        .collect();
    HeaderValue::from_str(clean.trim()).expect("visible ASCII is a valid header")
}

async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let o = state.orchestrator.clone();
    let (bytes, turn) = blocking(move || o.run_export_workflow(&id).map_err(ApiError::from)).await?;
    let filename = format!("pubbie-export-{}.csv", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"));
    let disposition = format!("attachment; filename=\"{filename}\"");
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8")),
            (header::CONTENT_DISPOSITION, HeaderValue::from_str(&disposition).expect("ASCII filename")),
            (header::HeaderName::from_static("x-export-summary"), header_text(turn.sql_result_summary.as_deref().unwrap_or(&turn.agent_text))),
        ],
        bytes,
    )
        .into_response())
}

async fn api_health(State(state): State<Arc<AppState>>) -> Result<Json<JsonValue>, ApiError> {
    let o = state.orchestrator.clone();
    let count = blocking(move || o.store().publication_count().map_err(ApiError::from)).await?;
    Ok(Json(json!({ "status": "ok", "publications": count })))
}

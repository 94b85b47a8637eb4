//! API error envelope. Every failure response is
//! `{"code": ..., "message": ..., "retryable": ...}` with a code from
//! [`CODES`].

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pubbie_core::orchestrator::OrchestratorError;
use pubbie_core::store::StoreError;
use serde::Serialize;

/// The closed set of error codes the API can return.
pub const CODES: [&str; 12] = [
    "NOT_FOUND",
    "BAD_REQUEST",
    "EMPTY_TEXT",
    "TEXT_TOO_LONG",
    "PAYLOAD_TOO_LARGE",
    "UNSUPPORTED_MEDIA_TYPE",
    "SESSION_NOT_FOUND",
    "SESSION_BUSY",
    "NO_RESULT_TO_EXPORT",
    "STORE_UNAVAILABLE",
    "STORE_CORRUPT",
    "INTERNAL",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    pub code: &'static str,
    pub message: String,
    pub retryable: bool,
    #[serde(skip)]
    pub status: StatusCode,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            retryable: false,
            status,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }

    pub fn empty_text() -> Self {
        Self::new(StatusCode::BAD_REQUEST, "EMPTY_TEXT", "the message is empty")
    }

    pub fn text_too_long(limit: usize) -> Self {
        Self::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "TEXT_TOO_LONG",
            format!("messages are limited to {limit} bytes"),
        )
    }

    pub fn payload_too_large(limit: u64) -> Self {
        Self::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "PAYLOAD_TOO_LARGE",
            format!("uploads are limited to {limit} bytes"),
        )
    }

    pub fn unsupported_media_type(found: &str) -> Self {
        Self::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "UNSUPPORTED_MEDIA_TYPE",
            format!("expected a CSV upload, got {found:?}"),
        )
    }

    pub fn internal() -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", "internal error")
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        // Database messages stay in the log.
        tracing::error!(error = %e, "store failure");
        match e {
            StoreError::SessionNotFound(id) => {
                Self::new(StatusCode::NOT_FOUND, "SESSION_NOT_FOUND", format!("no session {id:?}"))
            }
            StoreError::Corrupt(_) => Self::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "STORE_CORRUPT",
                "the database is damaged",
            ),
            _ => Self {
                retryable: true,
                ..Self::new(StatusCode::SERVICE_UNAVAILABLE, "STORE_UNAVAILABLE", "the database is unavailable")
            },
        }
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::SessionNotFound(id) => {
                Self::new(StatusCode::NOT_FOUND, "SESSION_NOT_FOUND", format!("no session {id:?}"))
            }
            OrchestratorError::SessionBusy(_) => Self {
                retryable: true,
                ..Self::new(
                    StatusCode::CONFLICT,
                    "SESSION_BUSY",
                    "another request is running in this session",
                )
            },
            OrchestratorError::NoResultToExport => Self::new(
                StatusCode::CONFLICT,
                "NO_RESULT_TO_EXPORT",
                "there is no query result to export yet; ask a question about the data first",
            ),
            OrchestratorError::Store(e) => e.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

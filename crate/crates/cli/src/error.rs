//! Error types for the service and the command line.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;
use walkcoach_core::agents::AgentError;
use walkcoach_core::session::SessionError;
use walkcoach_core::stats::StatsError;
use walkcoach_core::telemetry::TelemetryError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] walkcoach_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        CliError::Core(e.into())
    }
}

/// JSON error body `{code, message}` with its HTTP status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }
}

impl From<walkcoach_core::Error> for ApiError {
    fn from(e: walkcoach_core::Error) -> Self {
        use walkcoach_core::Error as E;
        let message = e.to_string();
        let (status, code) = match &e {
            E::Session(s) => match s {
                SessionError::Phase { .. } | SessionError::WrongPhase { .. } | SessionError::Closed => {
                    (StatusCode::CONFLICT, "phase_violation")
                }
                SessionError::Precondition(_) => (StatusCode::CONFLICT, "precondition"),
                SessionError::Ordering { .. }
                | SessionError::Telemetry(TelemetryError::Ordering { .. })
                | SessionError::Integrity(_)
                | SessionError::Scheduler(_) => (StatusCode::CONFLICT, "conflict"),
                SessionError::UnknownPrompt(_) => (StatusCode::NOT_FOUND, "not_found"),
                SessionError::Validation(_) | SessionError::Telemetry(_) | SessionError::Parse { .. } => {
                    (StatusCode::BAD_REQUEST, "validation")
                }
            },
            E::Agent(AgentError::SessionClosed) => (StatusCode::CONFLICT, "phase_violation"),
            E::Agent(AgentError::Backend(_)) => (StatusCode::BAD_GATEWAY, "backend"),
            E::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            _ => (StatusCode::BAD_REQUEST, "validation"),
        };
        Self::new(status, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

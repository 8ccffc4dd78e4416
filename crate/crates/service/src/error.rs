use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::json;

#[derive(Debug, Clone, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("invalid request")]
    Invalid(Vec<FieldError>),

    #[error("{0} not found")]
    NotFound(String),

    #[error("{message}")]
    Conflict {
        message: String,
        status: Option<&'static str>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError::Invalid(vec![FieldError {
            field: field.into(),
            message: message.into(),
        }])
    }
}

impl From<alids_core::Error> for ApiError {
    fn from(e: alids_core::Error) -> Self {
        use alids_core::Error as E;
        match e {
            E::Config(_) | E::Parameter(_) | E::Capability(_) | E::MissingLabels(_) => {
                ApiError::invalid("config", e.to_string())
            }
            E::Rejected(m) => ApiError::Conflict {
                message: m,
                status: None,
            },
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, body) = match &self {
            ApiError::Invalid(fields) => (
                StatusCode::BAD_REQUEST,
                json!({"error": self.to_string(), "fields": fields}),
            ),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, json!({"error": self.to_string()})),
            ApiError::Conflict { message, status } => (
                StatusCode::CONFLICT,
                json!({"error": message, "status": status}),
            ),
            ApiError::Internal(_) => {
                tracing::error!("{self}");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": self.to_string()}))
            }
        };
        (code, Json(body)).into_response()
    }
}

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::Value;

use alkgp::dataset::DatasetError;
use alkgp::selectors::SelectError;

/// Error body: `{code, message, details}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "campaign_not_found", format!("no campaign {id:?}"))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        let details = match &e {
            DatasetError::Csv { row, .. } => serde_json::json!({ "row": row }),
            DatasetError::MissingValue { row, column } => serde_json::json!({ "row": row, "column": column }),
            DatasetError::Parse { row, column, value } => {
                serde_json::json!({ "row": row, "column": column, "value": value })
            }
            DatasetError::NonFinite { row, column, .. } => serde_json::json!({ "row": row, "column": column }),
            DatasetError::UnknownCategory { row, column, value } => {
                serde_json::json!({ "row": row, "column": column, "value": value })
            }
            DatasetError::DuplicateId { row, id } => serde_json::json!({ "row": row, "id": id }),
            DatasetError::MissingColumn(c) => serde_json::json!({ "column": c }),
            _ => Value::Null,
        };
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset", e.to_string()).with_details(details)
    }
}

impl From<SelectError> for ApiError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::InvalidConfig(m) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", m),
            SelectError::UnknownPoint(i) => {
                Self::new(StatusCode::NOT_FOUND, "unknown_point", format!("no point with index {i}"))
            }
            SelectError::AlreadyObserved(i) => Self::new(
                StatusCode::CONFLICT,
                "already_observed",
                format!("point {i} already has a label"),
            ),
            SelectError::NonFiniteLabel { index, value } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_label",
                format!("label for point {index} must be finite, got {value}"),
            ),
            SelectError::BudgetExhausted(h) => Self::new(
                StatusCode::CONFLICT,
                "budget_exhausted",
                format!("all {h} labels of the budget have been used"),
            ),
            other => Self::internal(other.to_string()),
        }
    }
}

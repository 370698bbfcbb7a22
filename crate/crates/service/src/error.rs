use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use tutorbench_core::api::ErrorBody;
use tutorbench_core::pipeline::PipelineError;
use tutorbench_core::survey::SurveyError;

use crate::ServiceError;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("no item pool is loaded")]
    NoPool,
    #[error("missing or wrong operator token")]
    Unauthorized,
    #[error("operator routes are disabled because no token is configured")]
    OperatorDisabled,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Pipeline(p) => ApiError::Pipeline(p),
            ServiceError::Survey(s) => ApiError::Survey(s),
        }
    }
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::Survey(e) => match e {
                SurveyError::SessionNotFound(_) => (StatusCode::NOT_FOUND, "session_not_found"),
                SurveyError::OutOfOrder { .. } => (StatusCode::CONFLICT, "out_of_order"),
                SurveyError::ConsentMissing(_) => (StatusCode::FORBIDDEN, "consent_missing"),
                SurveyError::SessionComplete(_) => (StatusCode::GONE, "session_complete"),
                SurveyError::EmptyEvaluator => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
                SurveyError::PoolTooSmall { .. } => (StatusCode::SERVICE_UNAVAILABLE, "pool_too_small"),
                SurveyError::InvalidPool(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_pool"),
                SurveyError::Io(_) | SurveyError::Corrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            },
            ApiError::Pipeline(e) if e.is_validation() => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            ApiError::Pipeline(_) => (StatusCode::INTERNAL_SERVER_ERROR, "pipeline"),
            ApiError::NoPool => (StatusCode::SERVICE_UNAVAILABLE, "no_pool"),
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            ApiError::OperatorDisabled => (StatusCode::FORBIDDEN, "operator_disabled"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let expected_task_index = match &self {
            ApiError::Survey(SurveyError::OutOfOrder { expected, .. }) => Some(*expected),
            _ => None,
        };
        let body = ErrorBody {
            error: code.to_string(),
            message: self.to_string(),
            expected_task_index,
        };
        (status, Json(body)).into_response()
    }
}

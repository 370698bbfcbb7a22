use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tutorbench_core::api::{
    ComputeRequest, ConsentRequest, CreateSessionRequest, ExportSet, Health, ReloadSummary,
    SubmitJudgmentRequest,
};
use tutorbench_core::pipeline::{
    cmd_fit, cmd_generate, cmd_prepare, cmd_report, cmd_simulate, PipelineConfig, PipelineError,
};
use tutorbench_core::records::to_jsonl;
use tutorbench_core::survey::{SessionView, SurveyError, SurveyStore, TaskView};

use crate::{ApiError, AppState};

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/task", get(current_task))
        .route("/sessions/{id}/consent", post(consent))
        .route("/sessions/{id}/judgments", post(submit))
        .route("/export/judgments", get(export))
        .route("/export/calibration-agreement", get(agreement))
        .route("/admin/reload", post(reload))
        .route("/v1/prepare", post(prepare))
        .route("/v1/generate", post(generate))
        .route("/v1/simulate", post(simulate))
        .route("/v1/fit", post(fit))
        .route("/v1/report", post(report))
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

fn with_store<R>(state: &AppState, f: impl FnOnce(&SurveyStore) -> Result<R, SurveyError>) -> Result<R, ApiError> {
    let guard = state.survey.read();
    let store = guard.as_ref().ok_or(ApiError::NoPool)?;
    Ok(f(store)?)
}

fn with_store_mut<R>(
    state: &AppState,
    f: impl FnOnce(&mut SurveyStore) -> Result<R, SurveyError>,
) -> Result<R, ApiError> {
    let mut guard = state.survey.write();
    let store = guard.as_mut().ok_or(ApiError::NoPool)?;
    Ok(f(store)?)
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn require_operator(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let expected = state.operator_token.as_deref().ok_or(ApiError::OperatorDisabled)?;
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(ApiError::Unauthorized)?;
    if constant_time_eq(given.trim().as_bytes(), expected.as_bytes()) {
        Ok(())
    } else {
        Err(ApiError::Unauthorized)
    }
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    let guard = state.survey.read();
    Json(Health {
        status: "ok".into(),
        pool_items: guard.as_ref().map(|s| s.pool().len()),
        sessions: guard.as_ref().map_or(0, |s| s.sessions().count()),
    })
}

async fn create_session(
    State(state): State<Shared>,
    payload: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req = body(payload)?;
    let now = state.clock.now();
    let view = with_store_mut(&state, |store| {
        let session = store.create_session(&req.evaluator_id, now)?;
        store.view(&session.session_id)
    })?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(with_store(&state, |s| s.view(&id))?))
}

async fn current_task(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<TaskView>, ApiError> {
    let view = with_store(&state, |s| s.view(&id))?;
    view.task
        .map(Json)
        .ok_or(ApiError::Survey(SurveyError::SessionComplete(id)))
}

async fn consent(
    State(state): State<Shared>,
    Path(id): Path<String>,
    payload: Result<Json<ConsentRequest>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let req = body(payload)?;
    Ok(Json(with_store_mut(&state, |s| s.record_consent(&id, req.given))?))
}

async fn submit(
    State(state): State<Shared>,
    Path(id): Path<String>,
    payload: Result<Json<SubmitJudgmentRequest>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let req = body(payload)?;
    let now = state.clock.now();
    let view = with_store_mut(&state, |s| {
        s.submit_judgment(&id, req.task_index, req.ability, req.choice, now)?;
        s.view(&id)
    })?;
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default = "default_set")]
    set: ExportSet,
}

fn default_set() -> ExportSet {
    ExportSet::Judgments
}

async fn export(
    State(state): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<ExportQuery>,
) -> Result<impl IntoResponse, ApiError> {
    require_operator(&state, &headers)?;
    let records = with_store(&state, |s| {
        Ok(match q.set {
            ExportSet::Judgments => s.export_judgments(),
            ExportSet::Calibration => s.export_calibration(),
        })
    })?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], to_jsonl(&records)))
}

async fn agreement(State(state): State<Shared>, headers: HeaderMap) -> Result<impl IntoResponse, ApiError> {
    require_operator(&state, &headers)?;
    Ok(Json(with_store(&state, |s| Ok(s.calibration_agreement()))?))
}

async fn reload(State(state): State<Shared>, headers: HeaderMap) -> Result<Json<ReloadSummary>, ApiError> {
    require_operator(&state, &headers)?;
    let st = state.clone();
    let pool_items = tokio::task::spawn_blocking(move || st.reload_pool())
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(ReloadSummary { pool_items }))
}

/// Parses an optional JSON body; an empty body means no overrides.
fn compute_request(bytes: &Bytes) -> Result<ComputeRequest, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(ComputeRequest::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn run_command<T, F>(
    state: Shared,
    headers: HeaderMap,
    bytes: Bytes,
    reload: bool,
    command: F,
) -> Result<Json<T>, ApiError>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&PipelineConfig) -> Result<T, PipelineError> + Send + 'static,
{
    require_operator(&state, &headers)?;
    let req = compute_request(&bytes)?;
    let mut cfg = state.config.clone();
    if let Some(seed) = req.seed {
        cfg.seed = seed;
    }
    if let Some(w) = req.workers {
        cfg.workers = w;
    }
    let same_out = req.out_dir.is_none();
    if let Some(out) = req.out_dir {
        cfg.paths.out_dir = out.into();
    }
    let result = tokio::task::spawn_blocking(move || command(&cfg))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    if reload && same_out {
        let st = state.clone();
        let _ = tokio::task::spawn_blocking(move || {
            if let Err(e) = st.reload_pool() {
                tracing::debug!(error = %e, "pool not reloaded");
            }
        })
        .await;
    }
    Ok(Json(result))
}

async fn prepare(State(s): State<Shared>, h: HeaderMap, b: Bytes) -> impl IntoResponse {
    run_command(s, h, b, true, cmd_prepare).await
}

async fn generate(State(s): State<Shared>, h: HeaderMap, b: Bytes) -> impl IntoResponse {
    run_command(s, h, b, true, cmd_generate).await
}

async fn simulate(State(s): State<Shared>, h: HeaderMap, b: Bytes) -> impl IntoResponse {
    run_command(s, h, b, false, cmd_simulate).await
}

async fn fit(State(s): State<Shared>, h: HeaderMap, b: Bytes) -> impl IntoResponse {
    run_command(s, h, b, false, cmd_fit).await
}

async fn report(State(s): State<Shared>, h: HeaderMap, b: Bytes) -> impl IntoResponse {
    run_command(s, h, b, false, cmd_report).await
}

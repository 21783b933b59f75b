//! HTTP front end for the operator console. Handlers only translate
//! between HTTP and pipeline calls; pipeline work runs on the blocking
//! pool.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use vscreen_core::pipeline::{Eye, Pipeline, PipelineError, ScreeningSession, SessionState};

pub const MAX_CAPTURE_BYTES: usize = 32 * 1024 * 1024;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }
}

pub fn status_for(e: &PipelineError) -> StatusCode {
    match e {
        PipelineError::UnknownSession(_) | PipelineError::AssetNotFound(_) => StatusCode::NOT_FOUND,
        PipelineError::IdCollision(_)
        | PipelineError::WrongState { .. }
        | PipelineError::EyeAlreadyResolved(_)
        | PipelineError::WrongEye { .. }
        | PipelineError::NotEligible
        | PipelineError::AlreadyReferred
        | PipelineError::ReportNotReady(_) => StatusCode::CONFLICT,
        PipelineError::InvalidRequest(_) | PipelineError::EyeNotConfigured(_) => StatusCode::BAD_REQUEST,
        PipelineError::Decode(_) => StatusCode::UNPROCESSABLE_ENTITY,
        PipelineError::ConfigInvalid(_) | PipelineError::CorruptLog { .. } | PipelineError::Store(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        Self::new(status_for(&e), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub patient_ref: String,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferralRequest {
    #[serde(default)]
    pub destination: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub patient_ref: String,
    pub state: SessionState,
    pub eyes: Vec<Eye>,
    pub next_eye: Option<Eye>,
}

impl From<&ScreeningSession> for SessionView {
    fn from(s: &ScreeningSession) -> Self {
        Self {
            session_id: s.id().to_string(),
            patient_ref: s.header.patient_ref.clone(),
            state: s.state,
            eyes: s.header.eyes.clone(),
            next_eye: s.next_eye(),
        }
    }
}

#[derive(Clone)]
struct AppState {
    pipeline: Arc<Pipeline>,
}

async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&Pipeline) -> Result<T, PipelineError> + Send + 'static,
) -> ApiResult<T> {
    let pipeline = state.pipeline.clone();
    tokio::task::spawn_blocking(move || f(&pipeline))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid-request", e.to_string()))
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "operating_point": state.pipeline.operating_point().calibration_set_id,
    }))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req: CreateSession = parse_json(&body)?;
    let session = blocking(&state, move |p| match req.session_id {
        Some(id) => p.create_session_with_id(&id, &req.patient_ref),
        None => p.create_session(&req.patient_ref),
    })
    .await?;
    Ok((StatusCode::CREATED, Json(SessionView::from(&session))))
}

async fn submit_capture(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    body: Bytes,
) -> ApiResult<Response> {
    let eye: Eye = match query.get("eye") {
        Some(e) => e
            .parse()
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "invalid-request", format!("unknown eye `{e}`")))?,
        None => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid-request",
                "query parameter `eye` is required",
            ))
        }
    };
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid-request", "empty capture body"));
    }
    let outcome = blocking(&state, move |p| p.submit_capture(&id, eye, &body)).await?;
    Ok(Json(outcome).into_response())
}

async fn run_screening(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let report = blocking(&state, move |p| p.run_screening(&id)).await?;
    Ok(Json(report).into_response())
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let report = blocking(&state, move |p| p.report(&id)).await?;
    Ok(Json(report).into_response())
}

fn content_type(name: &str) -> &'static str {
    match name.rsplit_once('.').map(|(_, ext)| ext) {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("json") => "application/json",
        Some("txt") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

async fn get_asset(State(state): State<AppState>, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let ct = content_type(&name);
    let bytes = blocking(&state, move |p| p.asset(&id, &name)).await?;
    Ok(([(header::CONTENT_TYPE, ct)], bytes).into_response())
}

async fn issue_referral(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let req: ReferralRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ReferralRequest::default()
    } else {
        parse_json(&body)?
    };
    let record = blocking(&state, move |p| p.issue_referral(&id, req.destination.as_deref())).await?;
    Ok((StatusCode::CREATED, Json(serde_json::to_value(record).expect("record serializes"))))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint")
}

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/captures", post(submit_capture))
        .route("/sessions/{id}/screen", post(run_screening))
        .route("/sessions/{id}/report", get(get_report))
        .route("/sessions/{id}/assets/{name}", get(get_asset))
        .route("/sessions/{id}/referral", post(issue_referral))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_CAPTURE_BYTES))
        .with_state(AppState { pipeline })
}

/// Serves until ctrl-c.
pub async fn serve(pipeline: Arc<Pipeline>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(pipeline))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

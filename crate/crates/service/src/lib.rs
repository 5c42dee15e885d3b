//! HTTP+JSON front end over [`abluf_core::TrainingSession`].
//!
//! | method | path                       | body                         |
//! |--------|----------------------------|------------------------------|
//! | POST   | `/sessions`                | `{scenario, learner, seed?}` |
//! | POST   | `/sessions/{id}/feedback`  | `{"f": "+" \| "-" \| "0"}`   |
//! | POST   | `/sessions/{id}/selection` | `{"a": int}`                 |
//! | POST   | `/sessions/{id}/done`      |                              |
//! | GET    | `/sessions/{id}`           |                              |
//!
//! Every success returns the session descriptor; every failure returns
//! `{code, message, violations?}`. When a session finishes, its record log is
//! written to `<log_dir>/<id>.jsonl` (plus a `.meta.json`), ready for `lab replay`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use abluf_core::{
    Error as CoreError, FeedbackKind, LearnerKind, LearnerSettings, ScenarioConfig, SessionDescriptor,
    TrainingSession,
};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<String>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                violations: None,
            },
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let (status, code) = match &e {
            CoreError::Constraint(_) | CoreError::InvalidConfig(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config"),
            CoreError::OutOfBounds { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "out_of_bounds"),
            CoreError::Protocol(_) | CoreError::SelectionRequired => (StatusCode::CONFLICT, "protocol"),
            CoreError::Unsupported(_) => (StatusCode::BAD_REQUEST, "unsupported"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: e.to_string(),
                violations: e.violations(),
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Json<SessionDescriptor>, ApiError>;

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    pub scenario: ScenarioConfig,
    pub learner: LearnerKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub settings: Option<LearnerSettings>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FeedbackRequest {
    pub f: FeedbackKind,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SelectionRequest {
    pub a: usize,
}

/// Shared server state: the session table and where finished logs go.
#[derive(Debug, Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<TrainingSession>>>>>,
    log_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(log_dir: Option<PathBuf>) -> Self {
        Self {
            sessions: Arc::default(),
            log_dir,
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<TrainingSession>>, ApiError> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(describe))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/selection", post(selection))
        .route("/sessions/{id}/done", post(done))
        .with_state(state)
}

async fn create(State(state): State<AppState>, body: Result<Json<CreateRequest>, JsonRejection>) -> ApiResult {
    let Json(req) = body?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let seed = req.seed.unwrap_or_else(rand_seed);
    let session = TrainingSession::create(
        id.clone(),
        req.scenario,
        req.learner,
        req.settings.unwrap_or_default(),
        seed,
    )?;
    let d = session.descriptor();
    state.sessions.write().insert(id.clone(), Arc::new(Mutex::new(session)));
    tracing::info!(session = %id, seed, "session created");
    Ok(Json(d))
}

fn rand_seed() -> u64 {
    let (hi, lo) = uuid::Uuid::new_v4().as_u64_pair();
    hi ^ lo
}

async fn describe(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let s = state.session(&id)?;
    let d = s.lock().descriptor();
    Ok(Json(d))
}

async fn feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult {
    let s = state.session(&id)?;
    let Json(req) = body?;
    let d = s.lock().post_feedback(req.f)?;
    Ok(Json(d))
}

async fn selection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SelectionRequest>, JsonRejection>,
) -> ApiResult {
    let s = state.session(&id)?;
    let Json(req) = body?;
    let d = s.lock().post_selection(req.a)?;
    Ok(Json(d))
}

async fn done(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let s = state.session(&id)?;
    let mut session = s.lock();
    if session.post_done()? {
        if let Some(path) = state.log_path(&id) {
            session.write_log(&path)?;
            tracing::info!(session = %id, log = %path.display(), "episode log written");
        }
    }
    Ok(Json(session.descriptor()))
}

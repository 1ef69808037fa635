use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::{ServeDir, ServeFile};
use tutorbot_core::engine::{apply_reply, debug_snapshot};
use tutorbot_core::{Curriculum, DebugState, EngineError, SessionState, SessionStatus, TutorReply};

use crate::events::{reply_events, EventBody, SessionEvent};
use crate::{new_session_id, AppState, ServiceError, SessionEntry};

const PLACEHOLDER_PAGE: &str = "<!doctype html>\n<html><head><title>tutorbot</title></head>\
<body><h1>tutorbot</h1><p>The console is not installed. The API lives under <code>/api</code>.</p></body></html>\n";

/// Error body returned by every failing route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub(crate) struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}"))
    }

    fn model_not_loaded() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "model_not_loaded",
            "no model checkpoint is loaded",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code) = match &e {
            EngineError::Completed => (StatusCode::CONFLICT, "session_completed"),
            EngineError::EmptyText => (StatusCode::UNPROCESSABLE_ENTITY, "empty_text"),
            EngineError::OutOfOrder { .. } => (StatusCode::CONFLICT, "out_of_order"),
            EngineError::OversizedCurriculum { .. } | EngineError::Curriculum(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_curriculum")
            }
            EngineError::Config(_) | EngineError::Model(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "model_error")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        log::error!("{e}");
        match e {
            ServiceError::Engine(e) => e.into(),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", other.to_string()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    curriculum_id: String,
}

#[derive(Debug, Serialize)]
struct Created {
    session_id: String,
    opening: TutorReply,
}

#[derive(Debug, Deserialize)]
struct StudentText {
    text: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/turns", post(post_turn))
        .route("/api/sessions/{id}/debug", get(get_debug))
        .route("/api/curricula", get(list_curricula))
        .route("/api/{*rest}", axum::routing::any(api_not_found));

    let mut app = match &state.config.static_dir {
        Some(dir) if dir.is_dir() => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        _ => api.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })),
    };
    if let Some(cors) = cors_layer(&state.config.cors_allowlist) {
        app = app.layer(cors);
    }
    app.with_state(state)
}

fn cors_layer(allow: &[String]) -> Option<CorsLayer> {
    if allow.is_empty() {
        return None;
    }
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if allow.iter().any(|o| o == "*") {
        return Some(layer.allow_origin(Any));
    }
    let origins: Vec<HeaderValue> = allow
        .iter()
        .filter_map(|o| match HeaderValue::from_str(o) {
            Ok(v) => Some(v),
            Err(_) => {
                log::warn!("ignoring invalid CORS origin {o:?}");
                None
            }
        })
        .collect();
    Some(layer.allow_origin(origins))
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn join<T>(task: tokio::task::JoinHandle<Result<T, ApiError>>) -> Result<T, ApiError> {
    task.await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("worker failed: {e}"))
    })?
}

fn stamp(session_id: &str, first_seq: u64, bodies: Vec<EventBody>) -> Vec<SessionEvent> {
    let timestamp = Utc::now();
    bodies
        .into_iter()
        .zip(first_seq..)
        .map(|(body, seq)| SessionEvent {
            session_id: session_id.to_string(),
            seq,
            body,
            timestamp,
        })
        .collect()
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = payload?;
    let curriculum = app.curricula.get(&req.curriculum_id).cloned().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_curriculum",
            format!("no curriculum {}", req.curriculum_id),
        )
    })?;
    let engine = app.engine.clone().ok_or_else(ApiError::model_not_loaded)?;
    let worker = app.clone();
    let created = tokio::task::spawn_blocking(move || {
        engine.check_curriculum(&curriculum)?;
        let session_id = new_session_id();
        let cap = engine.config().max_turns_per_instruction;
        let mut state = SessionState::new(session_id.clone(), curriculum.clone());
        let raw = engine.generate(&state)?;
        let opening = apply_reply(&mut state, &raw, cap)?;
        let mut bodies = vec![EventBody::Created {
            curriculum,
            max_turns_per_instruction: cap,
        }];
        bodies.extend(reply_events(0, &raw, &opening));
        let events = stamp(&session_id, 0, bodies);
        let next_seq = events.len() as u64;
        worker.log.append(&events)?;
        worker.insert(session_id.clone(), SessionEntry { state, next_seq });
        Ok(Created { session_id, opening })
    });
    let created = join(created).await?;
    log::info!("created session {}", created.session_id);
    Ok((StatusCode::CREATED, Json(created)))
}

async fn post_turn(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<StudentText>, JsonRejection>,
) -> Result<Json<TutorReply>, ApiError> {
    let entry = app.session(&id)?.ok_or_else(|| ApiError::unknown_session(&id))?;
    let Json(req) = payload?;
    let mut guard = entry.lock_owned().await;
    if guard.state.status == SessionStatus::Completed {
        return Err(EngineError::Completed.into());
    }
    if req.text.trim().is_empty() {
        return Err(EngineError::EmptyText.into());
    }
    let engine = app.engine.clone().ok_or_else(ApiError::model_not_loaded)?;
    let worker = app.clone();
    let task = tokio::task::spawn_blocking(move || {
        let mut next = guard.state.clone();
        let prior = next.current_index;
        let (reply, raw) = engine.student_turn_raw(&mut next, &req.text)?;
        let mut bodies = vec![EventBody::StudentTurn { text: req.text }];
        bodies.extend(reply_events(prior, &raw, &reply));
        let events = stamp(&next.session_id, guard.next_seq, bodies);
        worker.log.append(&events)?;
        guard.next_seq += events.len() as u64;
        guard.state = next;
        Ok(reply)
    });
    Ok(Json(join(task).await?))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionState>, ApiError> {
    let entry = app.session(&id)?.ok_or_else(|| ApiError::unknown_session(&id))?;
    let state = entry.lock().await.state.clone();
    Ok(Json(state))
}

async fn get_debug(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<DebugState>, ApiError> {
    let entry = app.session(&id)?.ok_or_else(|| ApiError::unknown_session(&id))?;
    let debug = debug_snapshot(&entry.lock().await.state);
    Ok(Json(debug))
}

async fn list_curricula(State(app): State<Arc<AppState>>) -> Json<Vec<Curriculum>> {
    Json(app.curricula().cloned().collect())
}

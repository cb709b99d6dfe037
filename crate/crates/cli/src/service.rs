//! JSON HTTP API over sessions, chat, traces and the schema.
//!
//! | Method | Path | Result |
//! |---|---|---|
//! | POST | /sessions | 201 `{session_id}` |
//! | GET | /sessions | `{sessions: [id]}` |
//! | GET | /sessions/{id} | transcript |
//! | GET | /sessions/{id}/status | `{session_id, in_flight, state}` |
//! | POST | /sessions/{id}/messages | `{answer, trace_id, outcome}`; 409 while busy, 503 on provider failure |
//! | GET | /traces/{id} | full pipeline trace |
//! | GET | /schema | catalog |
//! | GET | /health | `{status, tables}` |
//! | POST | /admin/reload-templates | `{reloaded: true}` |
//!
//! With a bearer token configured every route except /health needs
//! `Authorization: Bearer <token>`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use loopchat_core::clock::{Clock, SystemClock};
use loopchat_core::memory::{ChatSession, InMemorySessionStore, MemoryError, SessionStore, SqliteSessionStore};
use loopchat_core::orchestrator::{Outcome, PipelineError, PipelineState, PipelineTrace};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ServiceConfig;
use crate::engine::Engine;

pub struct AppState {
    pub engine: Engine,
    sessions: Arc<dyn SessionStore>,
    traces: Mutex<HashMap<String, PipelineTrace>>,
    /// Sessions with a question in flight, with the latest pipeline state.
    active: Mutex<HashMap<String, Option<PipelineState>>>,
    clock: Arc<dyn Clock>,
    auth_token: Option<String>,
}

impl AppState {
    pub fn new(engine: Engine, sessions: Arc<dyn SessionStore>, clock: Arc<dyn Clock>, auth_token: Option<String>) -> Self {
        AppState {
            engine,
            sessions,
            traces: Mutex::new(HashMap::new()),
            active: Mutex::new(HashMap::new()),
            clock,
            auth_token,
        }
    }

    /// State for `config` with the system clock and its session store.
    pub fn from_config(engine: Engine, config: &ServiceConfig) -> Result<Self, MemoryError> {
        let sessions: Arc<dyn SessionStore> = match &config.sessions_db {
            Some(path) => Arc::new(SqliteSessionStore::open(path)?),
            None => Arc::new(InMemorySessionStore::new()),
        };
        Ok(Self::new(engine, sessions, Arc::new(SystemClock), config.auth_token.clone()))
    }

    fn active(&self) -> std::sync::MutexGuard<'_, HashMap<String, Option<PipelineState>>> {
        self.active.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn traces(&self) -> std::sync::MutexGuard<'_, HashMap<String, PipelineTrace>> {
        self.traces.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn store_trace(&self, trace: PipelineTrace) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.traces().insert(id.clone(), trace);
        id
    }
}

/// Marks a session busy until dropped.
struct InFlight {
    app: Arc<AppState>,
    session_id: String,
}

impl InFlight {
    fn begin(app: &Arc<AppState>, session_id: &str) -> Option<Self> {
        let mut active = app.active();
        if active.contains_key(session_id) {
            return None;
        }
        active.insert(session_id.to_string(), None);
        Some(InFlight { app: app.clone(), session_id: session_id.to_string() })
    }
}

impl Drop for InFlight {
    fn drop(&mut self) {
        self.app.active().remove(&self.session_id);
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Unauthorized,
    NotFound(String),
    Conflict(String),
    Unavailable { message: String, trace_id: String },
    Unprocessable(String),
    Internal(String),
}

impl From<MemoryError> for ApiError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::UnknownSession(id) => ApiError::NotFound(format!("session '{id}' not found")),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": m })),
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, json!({ "error": "missing or wrong bearer token" })),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({ "error": m })),
            ApiError::Unavailable { message, trace_id } => {
                (StatusCode::SERVICE_UNAVAILABLE, json!({ "error": message, "trace_id": trace_id }))
            }
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": m })),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct MessageRequest {
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageReply {
    pub answer: String,
    pub trace_id: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub in_flight: bool,
    pub state: Option<PipelineState>,
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/status", get(session_status))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/traces/{id}", get(get_trace))
        .route("/schema", get(schema))
        .route("/admin/reload-templates", post(reload_templates))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token))
        .route("/health", get(health))
        .with_state(app)
}

async fn require_token(State(app): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &app.auth_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(request).await
}

async fn create_session(State(app): State<Arc<AppState>>) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let session = ChatSession::new(uuid::Uuid::new_v4().simple().to_string(), app.clock.now());
    app.sessions.create(&session)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session.session_id }))))
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    Ok(Json(json!({ "sessions": app.sessions.list()? })))
}

fn load_session(app: &AppState, id: &str) -> Result<ChatSession, ApiError> {
    app.sessions.load(id)?.ok_or_else(|| ApiError::NotFound(format!("session '{id}' not found")))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    Ok(Json(load_session(&app, &id)?.export_transcript()))
}

async fn session_status(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionStatus>, ApiError> {
    load_session(&app, &id)?;
    let active = app.active();
    Ok(Json(SessionStatus { in_flight: active.contains_key(&id), state: active.get(&id).copied().flatten(), session_id: id }))
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<MessageRequest>,
) -> Result<Json<MessageReply>, ApiError> {
    let question = body.question.trim().to_string();
    if question.is_empty() {
        return Err(ApiError::BadRequest("question must not be empty".into()));
    }
    load_session(&app, &id)?;
    let guard =
        InFlight::begin(&app, &id).ok_or_else(|| ApiError::Conflict(format!("session '{id}' already has a question in flight")))?;
    let worker = app.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        answer_blocking(&worker, &id, &question)
    })
    .await
    .map_err(|e| ApiError::Internal(format!("pipeline task failed: {e}")))?
    .map(Json)
}

fn answer_blocking(app: &AppState, session_id: &str, question: &str) -> Result<MessageReply, ApiError> {
    // Reload under the in-flight mark so no other answer is committed meanwhile.
    let mut session = load_session(app, session_id)?;
    let observer = |state: PipelineState| {
        if let Some(slot) = app.active().get_mut(session_id) {
            *slot = Some(state);
        }
    };
    match app.engine.answer(question, &session, app.clock.as_ref(), Some(&observer)) {
        Ok(trace) => {
            let answer = trace.final_answer.clone();
            let outcome = trace.outcome;
            session.commit(question, &answer, app.engine.embedder.as_ref(), app.clock.now())?;
            app.sessions.save(&session)?;
            Ok(MessageReply { answer, trace_id: app.store_trace(trace), outcome })
        }
        Err(PipelineError::Provider { source, trace }) => {
            log::warn!("provider failure in session {session_id}: {source}");
            Err(ApiError::Unavailable { message: format!("language model unavailable: {source}"), trace_id: app.store_trace(*trace) })
        }
        Err(other) => Err(ApiError::Internal(other.to_string())),
    }
}

async fn get_trace(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<PipelineTrace>, ApiError> {
    app.traces().get(&id).cloned().map(Json).ok_or_else(|| ApiError::NotFound(format!("trace '{id}' not found")))
}

async fn schema(State(app): State<Arc<AppState>>) -> Json<loopchat_core::sql::SchemaCatalog> {
    Json(app.engine.gateway.catalog().clone())
}

async fn health(State(app): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let tables = app.engine.gateway.table_counts().map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(json!({ "status": "ok", "tables": tables })))
}

async fn reload_templates(State(app): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    app.engine.reload_templates().map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    log::info!("prompt templates reloaded");
    Ok(Json(json!({ "reloaded": true })))
}

/// Serves until ctrl-c. SIGHUP reloads the templates.
pub async fn serve(app: Arc<AppState>, bind: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    #[cfg(unix)]
    {
        let app = app.clone();
        let mut hangup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())?;
        tokio::spawn(async move {
            while hangup.recv().await.is_some() {
                match app.engine.reload_templates() {
                    Ok(()) => log::info!("templates reloaded on SIGHUP"),
                    Err(e) => log::error!("template reload failed, keeping the old one: {e}"),
                }
            }
        });
    }
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

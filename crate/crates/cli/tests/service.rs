use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use loopchat_cli::config::ServiceConfig;
use loopchat_cli::engine::Engine;
use loopchat_cli::service::{router, AppState, MessageReply, SessionStatus};
use loopchat_core::clock::StepClock;
use loopchat_core::eval::{reference_dataset, REFERENCE_SEED};
use loopchat_core::llm::{ChatModel, ChatRequest, ChatResponse, LlmError, LocalHashEmbedder, ScriptBuilder, ScriptStep, ScriptedProvider};
use loopchat_core::memory::InMemorySessionStore;
use loopchat_core::orchestrator::{Outcome, PipelineTrace};
use loopchat_core::prompt::{DEFAULT_TEMPLATE, TEMPLATE_FILE};
use loopchat_core::sql::{SchemaCatalog, SqlGateway};
use serde_json::{json, Value};
use tower::ServiceExt;

const PM: &str = "project_manager";
const SE: &str = "sql_engineer";
const DA: &str = "data_analyst";

fn gateway() -> SqlGateway {
    static DATA: OnceLock<loopchat_core::traffic::Dataset> = OnceLock::new();
    let gateway = SqlGateway::in_memory(SchemaCatalog::traffic()).unwrap();
    gateway.load_dataset(DATA.get_or_init(|| reference_dataset(REFERENCE_SEED).unwrap())).unwrap();
    gateway
}

fn detector_steps(answer: &str) -> Vec<ScriptStep> {
    ScriptBuilder::new()
        .action(PM, "", "query_database", "count detectors per route")
        .action(SE, "", "sql", "SELECT route, COUNT(*) AS n FROM dbo.cabinets GROUP BY route ORDER BY route")
        .action(DA, "", "answer", answer)
        .build()
}

fn app_with(model: Arc<dyn ChatModel>, config: &ServiceConfig) -> Router {
    let engine = Engine::assemble(gateway(), model, Arc::new(LocalHashEmbedder::default()), config).unwrap();
    let clock = Arc::new(StepClock::default());
    router(Arc::new(AppState::new(engine, Arc::new(InMemorySessionStore::new()), clock, config.auth_token.clone())))
}

fn app(steps: Vec<ScriptStep>) -> Router {
    app_with(Arc::new(ScriptedProvider::new(steps)), &ServiceConfig::scripted("unused.json"))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut request = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            request = request.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let response = app.clone().oneshot(request.body(body).unwrap()).await.unwrap();
    let status = response.status();
    let bytes = to_bytes(response.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, body) = call(app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["session_id"].as_str().unwrap().to_string();
    assert!(!id.is_empty());
    id
}

async fn ask(app: &Router, session: &str, question: &str) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/sessions/{session}/messages"), Some(json!({ "question": question }))).await
}

#[tokio::test]
async fn scripted_round_trip_returns_the_fixture_answer() {
    let app = app(detector_steps("Each route has six loop detectors."));
    let session = new_session(&app).await;
    let (status, body) = ask(&app, &session, "How many detectors per route?").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let reply: MessageReply = serde_json::from_value(body).unwrap();
    assert_eq!(reply.answer, "Each route has six loop detectors.");
    assert_eq!(reply.outcome, Outcome::Answered);

    let (status, trace) = call(&app, Method::GET, &format!("/traces/{}", reply.trace_id), None).await;
    assert_eq!(status, StatusCode::OK);
    let trace: PipelineTrace = serde_json::from_value(trace).unwrap();
    assert_eq!(trace.final_answer, reply.answer);
    assert_eq!(trace.sql_attempts.len(), 1);
    assert!(trace.executions_were_validated());
    assert_eq!(serde_json::from_str::<PipelineTrace>(&trace.to_json()).unwrap(), trace);

    let (status, transcript) = call(&app, Method::GET, &format!("/sessions/{session}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let turns = transcript["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 2);
    assert_eq!(turns[0]["text"], "How many detectors per route?");
    assert_eq!(turns[1]["text"], "Each route has six loop detectors.");
    assert!(turns[0].get("embedding").is_none());
}

#[tokio::test]
async fn chat_only_reply_has_no_sql() {
    let steps = ScriptBuilder::new().action(PM, "", "chat", "Hello! Ask me about traffic.").build();
    let app = app(steps);
    let session = new_session(&app).await;
    let (_, body) = ask(&app, &session, "hi").await;
    let reply: MessageReply = serde_json::from_value(body).unwrap();
    assert_eq!(reply.outcome, Outcome::ChatOnly);
    let (_, trace) = call(&app, Method::GET, &format!("/traces/{}", reply.trace_id), None).await;
    assert_eq!(trace["sql_attempts"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let app = app(Vec::new());
    for uri in ["/sessions/nope", "/sessions/nope/status", "/traces/nope"] {
        assert_eq!(call(&app, Method::GET, uri, None).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    assert_eq!(ask(&app, "nope", "q").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn empty_question_is_rejected() {
    let app = app(Vec::new());
    let session = new_session(&app).await;
    assert_eq!(ask(&app, &session, "   ").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn provider_failure_is_503_with_partial_trace() {
    let app = app(ScriptBuilder::new().action(PM, "", "query_database", "x").build());
    let session = new_session(&app).await;
    let (status, body) = ask(&app, &session, "How many detectors per route?").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let trace_id = body["trace_id"].as_str().unwrap();
    let (status, trace) = call(&app, Method::GET, &format!("/traces/{trace_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace["scratchpad"]["entries"][0]["kind"], "plan");
    let (_, transcript) = call(&app, Method::GET, &format!("/sessions/{session}"), None).await;
    assert!(transcript["turns"].as_array().unwrap().is_empty());
}

/// Scripted model that blocks every call until released.
struct GatedModel {
    inner: ScriptedProvider,
    gate: Mutex<Receiver<()>>,
}

impl ChatModel for GatedModel {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.gate.lock().unwrap().recv_timeout(Duration::from_secs(10)).expect("gate released");
        self.inner.complete(request)
    }
}

fn gated(steps: Vec<ScriptStep>) -> (Router, Sender<()>) {
    let (tx, rx) = channel();
    let model = GatedModel { inner: ScriptedProvider::new(steps), gate: Mutex::new(rx) };
    (app_with(Arc::new(model), &ServiceConfig::scripted("unused.json")), tx)
}

async fn status(app: &Router, session: &str) -> SessionStatus {
    let (_, body) = call(app, Method::GET, &format!("/sessions/{session}/status"), None).await;
    serde_json::from_value(body).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_message_while_busy_is_409() {
    let (app, gate) = gated(detector_steps("Six each."));
    let session = new_session(&app).await;
    let other = new_session(&app).await;
    let first = tokio::spawn({
        let app = app.clone();
        let session = session.clone();
        async move { ask(&app, &session, "How many detectors per route?").await }
    });
    let mut waited = 0;
    while !status(&app, &session).await.in_flight {
        tokio::time::sleep(Duration::from_millis(10)).await;
        waited += 1;
        assert!(waited < 500, "first request never started");
    }
    let busy = status(&app, &session).await;
    assert!(busy.state.is_some());
    assert_eq!(ask(&app, &session, "again?").await.0, StatusCode::CONFLICT);
    assert!(!status(&app, &other).await.in_flight);

    for _ in 0..3 {
        gate.send(()).unwrap();
    }
    let (code, body) = first.await.unwrap();
    assert_eq!(code, StatusCode::OK, "{body}");
    assert_eq!(body["answer"], "Six each.");
    let done = status(&app, &session).await;
    assert!(!done.in_flight);
    assert_eq!(done.state, None);
}

#[tokio::test]
async fn schema_health_and_listing() {
    let app = app(Vec::new());
    let (status, schema) = call(&app, Method::GET, "/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    let catalog: SchemaCatalog = serde_json::from_value(schema).unwrap();
    assert_eq!(catalog, SchemaCatalog::traffic());

    let (status, health) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    assert!(health["tables"]["dbo.cabinets"].as_u64().unwrap() > 0);

    let a = new_session(&app).await;
    let b = new_session(&app).await;
    let (_, list) = call(&app, Method::GET, "/sessions", None).await;
    let ids: Vec<&str> = list["sessions"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(ids.contains(&a.as_str()) && ids.contains(&b.as_str()));
}

#[tokio::test]
async fn bearer_token_guards_everything_but_health() {
    let config = ServiceConfig { auth_token: Some("s3cret".into()), ..ServiceConfig::scripted("unused.json") };
    let app = app_with(Arc::new(ScriptedProvider::new(Vec::new())), &config);
    assert_eq!(call(&app, Method::POST, "/sessions", None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, Method::GET, "/schema", None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, Method::GET, "/health", None).await.0, StatusCode::OK);
    let request = |token: &str| {
        Request::builder().method(Method::POST).uri("/sessions").header(header::AUTHORIZATION, token).body(Body::empty()).unwrap()
    };
    assert_eq!(app.clone().oneshot(request("Bearer wrong")).await.unwrap().status(), StatusCode::UNAUTHORIZED);
    assert_eq!(app.clone().oneshot(request("Bearer s3cret")).await.unwrap().status(), StatusCode::CREATED);
}

#[tokio::test]
async fn template_reload_keeps_the_old_template_on_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(TEMPLATE_FILE);
    std::fs::write(&path, DEFAULT_TEMPLATE).unwrap();
    let config = ServiceConfig { template_dir: Some(dir.path().to_path_buf()), ..ServiceConfig::scripted("unused.json") };
    let engine = Engine::assemble(
        gateway(),
        Arc::new(ScriptedProvider::new(Vec::new())),
        Arc::new(LocalHashEmbedder::default()),
        &config,
    )
    .unwrap();
    let state = Arc::new(AppState::new(engine, Arc::new(InMemorySessionStore::new()), Arc::new(StepClock::default()), None));
    let app = router(state.clone());

    std::fs::write(&path, DEFAULT_TEMPLATE.replace("Traffic Performance Score", "Road Quality Index")).unwrap();
    assert_eq!(call(&app, Method::POST, "/admin/reload-templates", None).await.0, StatusCode::OK);
    assert!(state.engine.template().domain_knowledge.contains("Road Quality Index"));

    std::fs::write(&path, "[[domain_knowledge]]\n").unwrap();
    let (status, body) = call(&app, Method::POST, "/admin/reload-templates", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert!(state.engine.template().domain_knowledge.contains("Road Quality Index"));
}

#[tokio::test]
async fn memory_carries_across_messages() {
    let mut steps = detector_steps("Six each.");
    steps.extend(detector_steps("Still six."));
    let provider = Arc::new(ScriptedProvider::new(steps));
    let app = app_with(provider.clone(), &ServiceConfig::scripted("unused.json"));
    let session = new_session(&app).await;
    assert_eq!(ask(&app, &session, "How many detectors per route?").await.0, StatusCode::OK);
    assert_eq!(ask(&app, &session, "And how many detectors are there per route now?").await.0, StatusCode::OK);
    let transcript = provider.transcript();
    let second_plan = &transcript[3].request.messages.last().unwrap().content;
    assert!(second_plan.contains("How many detectors per route?"), "{second_plan}");
}

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use http_body_util::BodyExt;
use serde::Deserialize;
use serde_json::{json, Value};

use chatbci_assist::bridge::transcript::{Clock, LogicalClock, SystemClock, Transcript};
use chatbci_assist::{
    ActionState, AutonomyPolicy, ChatSession, KnowledgeStore, PendingAction, Provider, ResearchPhase, ResultRef,
};

use crate::config::Config;
use crate::error::{from_value_at, Result, ServiceError};
use crate::executor::{AnalysisRequest, ExecMode, FigureRequest, WorkspaceExecutor};
use crate::registry::{RunRegistry, RunRequest};
use crate::workspace::{parse_params, Workspace, SESSION_PREFIX};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub type SessionHandle = Arc<Mutex<ChatSession>>;

#[derive(Clone)]
struct Cached {
    status: StatusCode,
    content_type: Option<HeaderValue>,
    body: Bytes,
}

type IdemKey = (Method, String, String);

/// Shared state behind every handler.
pub struct App {
    pub config: Config,
    pub ws: Arc<Workspace>,
    pub runs: Arc<RunRegistry>,
    pub knowledge: KnowledgeStore,
    provider: Arc<dyn Provider>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    idempotent: Mutex<HashMap<IdemKey, Arc<tokio::sync::Mutex<Option<Cached>>>>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl App {
    pub fn new(config: Config) -> Result<Arc<Self>> {
        config.validate()?;
        let ws = Arc::new(Workspace::open(&config.workspace, &config.data_root)?);
        let runs = Arc::new(RunRegistry::new(ws.clone(), config.max_parallel_runs));
        let knowledge = if config.knowledge_dir.is_dir() {
            KnowledgeStore::open(&config.knowledge_dir)?
        } else {
            KnowledgeStore::in_memory([])?
        };
        let provider = config.provider()?;
        Ok(Arc::new(Self {
            config,
            ws,
            runs,
            knowledge,
            provider,
            sessions: Mutex::new(HashMap::new()),
            idempotent: Mutex::new(HashMap::new()),
        }))
    }

    fn clock(&self) -> Box<dyn Clock> {
        if self.config.logical_clock {
            Box::new(LogicalClock::default())
        } else {
            Box::new(SystemClock)
        }
    }

    pub fn open_session(&self, policy: Option<AutonomyPolicy>) -> Result<String> {
        let id = self.ws.next_id(SESSION_PREFIX);
        let dir = self.ws.session_dir(&id);
        std::fs::create_dir_all(&dir)?;
        let session = ChatSession::open(
            id.clone(),
            self.provider.clone(),
            policy.unwrap_or_else(|| self.config.autonomy.clone()),
            Transcript::create(dir.join("transcript.jsonl"))?,
            self.clock(),
        )?
        .with_params(self.config.llm.params())
        .with_retry(self.config.llm.retry.clone());
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<SessionHandle> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| ServiceError::not_found(format!("session {id}")))
    }

    /// In background mode run notices land in the session transcript.
    pub fn executor_for(self: &Arc<Self>, session_id: &str, mode: ExecMode) -> WorkspaceExecutor {
        if mode == ExecMode::Inline {
            return WorkspaceExecutor::new(self.runs.clone(), mode);
        }
        let app = Arc::downgrade(self);
        let id = session_id.to_string();
        WorkspaceExecutor::new(self.runs.clone(), mode).with_notifier(Arc::new(move |notice, phase| {
            let Some(app) = app.upgrade() else { return };
            if let Ok(s) = app.session(&id) {
                if let Err(e) = lock(&s).notify(notice, phase) {
                    tracing::warn!(session = %id, "could not record run notice: {e}");
                }
            }
        }))
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/api/sessions", post(create_session))
            .route("/api/sessions/{id}", get(get_session))
            .route("/api/sessions/{id}/messages", post(post_message))
            .route("/api/sessions/{id}/autonomy", get(get_autonomy).put(put_autonomy))
            .route("/api/sessions/{id}/actions/{aid}/approve", post(approve_action))
            .route("/api/sessions/{id}/actions/{aid}/reject", post(reject_action))
            .route("/api/datasets", get(list_datasets))
            .route("/api/analyses", post(create_analysis))
            .route("/api/analyses/{id}", get(get_analysis))
            .route("/api/runs", post(create_run).get(list_runs))
            .route("/api/runs/{id}", get(get_run))
            .route("/api/runs/{id}/cancel", post(cancel_run))
            .route("/api/figures", post(create_figure))
            .route("/api/figures/{id}", get(get_figure_png))
            .route("/api/figures/{id}/data", get(get_figure_data))
            .fallback(|| async { ServiceError::not_found("no such endpoint") })
            .layer(middleware::from_fn_with_state(self.clone(), idempotency))
            .with_state(self)
    }
}

/// Replays the stored response for a repeated (method, path, key). Requests
/// sharing a key are serialized, so the handler runs at most once.
async fn idempotency(State(app): State<Arc<App>>, req: Request, next: Next) -> Response {
    let key = match req.headers().get(IDEMPOTENCY_HEADER).map(|v| v.to_str()) {
        None => return next.run(req).await,
        Some(Ok(k)) if !k.is_empty() && matches!(*req.method(), Method::POST | Method::PUT) => k.to_string(),
        Some(Ok(_)) => return next.run(req).await,
        Some(Err(_)) => return ServiceError::field(IDEMPOTENCY_HEADER, "must be visible ASCII").into_response(),
    };
    let slot = lock(&app.idempotent)
        .entry((req.method().clone(), req.uri().path().to_string(), key))
        .or_default()
        .clone();
    let mut guard = slot.lock().await;
    if let Some(c) = guard.as_ref() {
        return cached_response(c);
    }
    let (parts, body) = next.run(req).await.into_parts();
    let body = match body.collect().await {
        Ok(b) => b.to_bytes(),
        Err(e) => return ServiceError::internal(e.to_string()).into_response(),
    };
    let cached = Cached { status: parts.status, content_type: parts.headers.get(header::CONTENT_TYPE).cloned(), body };
    let resp = cached_response(&cached);
    if !cached.status.is_server_error() {
        *guard = Some(cached);
    }
    resp
}

fn cached_response(c: &Cached) -> Response {
    let mut resp = Response::new(Body::from(c.body.clone()));
    *resp.status_mut() = c.status;
    if let Some(ct) = &c.content_type {
        resp.headers_mut().insert(header::CONTENT_TYPE, ct.clone());
    }
    resp
}

/// Empty bodies count as `{}`.
fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T> {
    let value: Value = if body.iter().all(u8::is_ascii_whitespace) {
        json!({})
    } else {
        serde_json::from_slice(body).map_err(|e| ServiceError::field("body", format!("invalid JSON: {e}")))?
    };
    if !value.is_object() {
        return Err(ServiceError::field("body", "must be a JSON object"));
    }
    from_value_at("", value)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::internal(e.to_string()))?
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    policy: Option<AutonomyPolicy>,
}

async fn create_session(State(app): State<Arc<App>>, body: Bytes) -> Result<Response> {
    let req: CreateSession = parse_body(&body)?;
    let id = blocking(move || app.open_session(req.policy)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

async fn get_session(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Json<Value>> {
    let s = app.session(&id)?;
    let state = lock(&s).state();
    let mut v = serde_json::to_value(state)?;
    v["transcript"] = json!(format!("sessions/{id}/transcript.jsonl"));
    v["pending_actions"] = json!(lock(&s).actions().filter(|a| a.state == ActionState::Pending).collect::<Vec<_>>());
    Ok(Json(v))
}

fn default_phase() -> ResearchPhase {
    ResearchPhase::ExperimentDesign
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostMessage {
    content: String,
    #[serde(default = "default_phase")]
    phase: ResearchPhase,
}

async fn post_message(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>> {
    let req: PostMessage = parse_body(&body)?;
    if req.content.trim().is_empty() {
        return Err(ServiceError::field("content", "must not be empty"));
    }
    let session = app.session(&id)?;
    blocking(move || {
        let context = app.knowledge.context_for(&req.content, app.config.retrieval_k, app.config.budget_tokens);
        let mut ex = app.executor_for(&id, ExecMode::Background);
        let turn = lock(&session).respond(&req.content, req.phase, &context, &mut ex)?;
        let produced: Vec<&ResultRef> = turn.actions.iter().filter_map(|a| a.result.as_ref()).collect();
        let run_ids: Vec<&str> = produced.iter().filter(|r| r.kind == "run").map(|r| r.id.as_str()).collect();
        Ok(Json(json!({
            "reply": turn.reply,
            "pending_actions": turn.pending().collect::<Vec<_>>(),
            "actions": turn.actions,
            "artifacts": produced,
            "run_ids": run_ids,
            "parse_errors": turn.parse_errors,
            "context_docs": context.excerpts.iter().map(|e| e.doc_id.as_str()).collect::<Vec<_>>(),
        })))
    })
    .await
}

async fn get_autonomy(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Json<AutonomyPolicy>> {
    let s = app.session(&id)?;
    let policy = lock(&s).policy().clone();
    Ok(Json(policy))
}

/// Accepts any subset of phases; the rest keep their levels.
async fn put_autonomy(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> Result<Json<AutonomyPolicy>> {
    let levels: BTreeMap<String, Value> = parse_body(&body)?;
    let s = app.session(&id)?;
    let mut policy = lock(&s).policy().clone();
    for (name, level) in levels {
        let phase: ResearchPhase = name.parse().map_err(|_| ServiceError::field(&name, "unknown research phase"))?;
        let level = level
            .as_u64()
            .filter(|l| *l <= 3)
            .ok_or_else(|| ServiceError::field(&name, "level must be an integer in 0..=3"))?;
        policy.set(phase, level as u8)?;
    }
    blocking(move || {
        let mut g = lock(&s);
        if *g.policy() != policy {
            g.set_policy(policy)?;
        }
        Ok(Json(g.policy().clone()))
    })
    .await
}

async fn approve_action(
    State(app): State<Arc<App>>,
    Path((id, aid)): Path<(String, String)>,
) -> Result<Json<PendingAction>> {
    let s = app.session(&id)?;
    blocking(move || {
        let mut ex = app.executor_for(&id, ExecMode::Background);
        let action = lock(&s).approve(&aid, &mut ex)?;
        Ok(Json(action))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RejectBody {
    #[serde(default)]
    reason: Option<String>,
}

async fn reject_action(
    State(app): State<Arc<App>>,
    Path((id, aid)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<PendingAction>> {
    let req: RejectBody = parse_body(&body)?;
    let s = app.session(&id)?;
    blocking(move || Ok(Json(lock(&s).reject(&aid, req.reason)?))).await
}

async fn list_datasets(State(app): State<Arc<App>>) -> Result<Json<Value>> {
    blocking(move || Ok(Json(json!({ "datasets": app.ws.datasets()? })))).await
}

async fn create_analysis(State(app): State<Arc<App>>, body: Bytes) -> Result<Response> {
    let req: AnalysisRequest = parse_body(&body)?;
    let params = parse_params("params", req.params)?;
    let ws = app.ws.clone();
    let report = blocking(move || ws.begin_analysis(req.kind, params)).await?;
    let id = report.report_id.clone();
    let ws = app.ws.clone();
    tokio::task::spawn_blocking(move || ws.finish_analysis(report));
    Ok((StatusCode::ACCEPTED, Json(json!({ "report_id": id, "status": "pending" }))).into_response())
}

async fn get_analysis(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Json<Value>> {
    blocking(move || Ok(Json(serde_json::to_value(app.ws.load_report(&id)?)?))).await
}

async fn create_run(State(app): State<Arc<App>>, body: Bytes) -> Result<Response> {
    let req: RunRequest = parse_body(&body)?;
    let run_id = blocking(move || {
        let spec = req.to_spec(&app.ws)?;
        Ok(app.runs.submit(spec, None))
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id, "status": "queued" }))).into_response())
}

async fn list_runs(State(app): State<Arc<App>>) -> Json<Value> {
    Json(json!({ "runs": app.runs.list() }))
}

async fn get_run(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Json<Value>> {
    blocking(move || Ok(Json(serde_json::to_value(app.runs.snapshot(&id)?)?))).await
}

async fn cancel_run(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Response> {
    let snap = app.runs.cancel(&id)?;
    Ok((StatusCode::ACCEPTED, Json(snap)).into_response())
}

async fn create_figure(State(app): State<Arc<App>>, body: Bytes) -> Result<Response> {
    let req: FigureRequest = parse_body(&body)?;
    let fig = blocking(move || req.render(&app.ws)).await?;
    let id = fig.figure_id;
    let body = json!({
        "figure_id": id,
        "image": format!("/api/figures/{id}"),
        "data": format!("/api/figures/{id}/data"),
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_figure_png(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Response> {
    let bytes = blocking(move || app.ws.figure_png(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_figure_data(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Response> {
    let bytes = blocking(move || app.ws.figure_sidecar(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

pub async fn serve(app: Arc<App>, addr: std::net::SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app.router()).await?;
    Ok(())
}

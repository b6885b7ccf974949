//! HTTP API over live sessions with an NDJSON event stream and append-only
//! JSONL persistence.
//!
//! Each session sits behind one mutex, which is its command queue: every
//! mutation runs on a blocking worker while holding it, then publishes the
//! new log lines to disk and to stream subscribers in log order.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;
use walkcoach_core::agents::WalkSummary;
use walkcoach_core::engine::{EngineConfig, Services, SessionEngine};
use walkcoach_core::geo::GeoPoint;
use walkcoach_core::scheduler::Feedback;
use walkcoach_core::session::{event_to_json, Event, EventBody, Phase, SessionId, WalkStats};
use walkcoach_core::telemetry::WalkTick;
use walkcoach_core::{Condition, UserProfile};

use crate::error::ApiError;

const STREAM_BUFFER: usize = 4096;

#[derive(Debug, Clone, Default)]
pub struct AppConfig {
    /// Where `{session_id}.jsonl` logs are written; none keeps logs in memory.
    pub data_dir: Option<PathBuf>,
    /// Planning origin for sessions that do not give one.
    pub default_origin: Option<GeoPoint>,
}

pub struct AppState {
    services: Services,
    config: AppConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl AppState {
    pub fn new(services: Services, config: AppConfig) -> Arc<Self> {
        Arc::new(Self {
            services,
            config,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }
}

struct SessionHandle {
    inner: Mutex<Inner>,
    created: Instant,
    tx: broadcast::Sender<Published>,
}

#[derive(Clone)]
struct Published {
    line: Arc<str>,
    closes: bool,
}

struct Inner {
    engine: SessionEngine,
    published: usize,
    log_file: Option<File>,
}

fn closes(e: &Event) -> bool {
    matches!(&e.body, EventBody::PhaseChange(p) if p.to == Phase::Closed)
}

impl SessionHandle {
    /// Run one command against the engine and publish what it appended,
    /// also when it failed part-way.
    fn exec<T>(&self, f: impl FnOnce(&mut SessionEngine, f64) -> walkcoach_core::Result<T>) -> Result<T, ApiError> {
        let mut inner = self.inner.lock().expect("session poisoned");
        let now = self.created.elapsed().as_secs_f64().max(inner.engine.state().last_t());
        let result = f(&mut inner.engine, now);
        inner.publish(&self.tx)?;
        result.map_err(ApiError::from)
    }

    fn read<T>(&self, f: impl FnOnce(&SessionEngine) -> T) -> T {
        f(&self.inner.lock().expect("session poisoned").engine)
    }
}

impl Inner {
    fn publish(&mut self, tx: &broadcast::Sender<Published>) -> Result<(), ApiError> {
        let log = &self.engine.state().event_log;
        let fresh = &log[self.published..];
        if fresh.is_empty() {
            return Ok(());
        }
        let mut chunk = String::new();
        let mut lines = Vec::with_capacity(fresh.len());
        for e in fresh {
            let mut line = event_to_json(e);
            line.push('\n');
            chunk.push_str(&line);
            lines.push(Published {
                line: line.into(),
                closes: closes(e),
            });
        }
        self.published = log.len();
        for p in lines {
            // no subscribers is fine
            let _ = tx.send(p);
        }
        if let Some(f) = self.log_file.as_mut() {
            f.write_all(chunk.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", format!("log write failed: {e}")))?;
        }
        Ok(())
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(view_session))
        .route("/sessions/{id}/chat", post(chat))
        .route("/sessions/{id}/route/confirm", post(confirm_route))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/ticks", post(ticks))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/prompts/{pid}/feedback", post(feedback))
        .route("/sessions/{id}/finish", post(finish))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/log", get(log))
        .with_state(state)
}

// ---------------------------------------------------------------------------
// Bodies
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub profile: UserProfile,
    pub condition: Condition,
    /// `[lat, lon]` where planning starts.
    #[serde(default)]
    pub origin: Option<[f64; 2]>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteView {
    pub length_m: f64,
    pub segment_count: usize,
    pub waypoints: Vec<String>,
}

/// Client-facing projection of the session state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub phase: Phase,
    pub condition: Condition,
    pub route: Option<RouteView>,
    pub stats: WalkStats,
    pub pending_prompts: Vec<String>,
    pub event_count: usize,
}

impl SessionView {
    fn of(engine: &SessionEngine, services: &Services) -> Self {
        let s = engine.state();
        Self {
            session_id: s.session_id.to_string(),
            phase: s.phase,
            condition: s.condition,
            route: s.route.as_ref().map(|r| RouteView {
                length_m: r.total_length_m,
                segment_count: r.segments.len(),
                waypoints: r
                    .waypoints
                    .iter()
                    .map(|id| services.store.get(id).map(|p| p.name.clone()).unwrap_or_else(|| id.clone()))
                    .collect(),
            }),
            stats: s.stats.clone(),
            pending_prompts: s.pending_prompt_ids(),
            event_count: s.event_log.len(),
        }
    }
}

/// Optional explicit session time; the server clock is used otherwise.
#[derive(Debug, Default, Deserialize)]
pub struct Timed {
    #[serde(default)]
    pub t: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    pub text: String,
    #[serde(default)]
    pub t: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct FeedbackRequest {
    pub feedback: Feedback,
    #[serde(default)]
    pub t: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TickBatch {
    One(WalkTick),
    Many(Vec<WalkTick>),
    Wrapped { ticks: Vec<WalkTick> },
}

impl TickBatch {
    fn into_vec(self) -> Vec<WalkTick> {
        match self {
            TickBatch::One(t) => vec![t],
            TickBatch::Many(v) | TickBatch::Wrapped { ticks: v } => v,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EventsResponse {
    pub events: Vec<Event>,
}

#[derive(Debug, Serialize)]
pub struct ChatResponse {
    pub reply: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shortlist: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub events: Vec<Event>,
}

fn at(now: f64, t: Option<f64>) -> f64 {
    t.unwrap_or(now)
}

fn json_err(e: axum::extract::rejection::JsonRejection) -> ApiError {
    ApiError::validation(e.body_text())
}

type Body_<T> = Result<Json<T>, axum::extract::rejection::JsonRejection>;

// ---------------------------------------------------------------------------
// Handlers
// ---------------------------------------------------------------------------

async fn create_session(State(app): State<Arc<AppState>>, body: Body_<CreateSession>) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(json_err)?;
    let origin = match req.origin {
        Some([lat, lon]) => GeoPoint::new(lat, lon).map_err(|e| ApiError::validation(e.to_string()))?,
        None => app
            .config
            .default_origin
            .ok_or_else(|| ApiError::validation("no origin given and the server has no default origin"))?,
    };
    let id = SessionId::random();
    let mut cfg = EngineConfig::new(origin);
    if let Some(seed) = req.seed {
        cfg = cfg.with_seed(seed);
    }
    let engine = SessionEngine::with_id(id.clone(), req.profile.clone(), req.condition, app.services.clone(), cfg)?;
    let log_file = match &app.config.data_dir {
        Some(dir) => {
            let io = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string());
            std::fs::create_dir_all(dir).map_err(io)?;
            let meta = serde_json::json!({
                "session_id": id.as_str(),
                "profile": req.profile,
                "condition": req.condition,
            });
            std::fs::write(dir.join(format!("{id}.meta.json")), meta.to_string()).map_err(io)?;
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join(format!("{id}.jsonl")))
                    .map_err(io)?,
            )
        }
        None => None,
    };
    let view = SessionView::of(&engine, &app.services);
    let (tx, _) = broadcast::channel(STREAM_BUFFER);
    let handle = Arc::new(SessionHandle {
        inner: Mutex::new(Inner {
            engine,
            published: 0,
            log_file,
        }),
        created: Instant::now(),
        tx,
    });
    app.sessions
        .write()
        .expect("session table poisoned")
        .insert(id.to_string(), handle);
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn view_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let h = app.session(&id)?;
    Ok(Json(h.read(|e| SessionView::of(e, &app.services))))
}

async fn chat(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body_<ChatRequest>,
) -> Result<Json<ChatResponse>, ApiError> {
    let Json(req) = body.map_err(json_err)?;
    let h = app.session(&id)?;
    let events = blocking(move || h.exec(|e, now| e.chat(at(now, req.t), &req.text))).await?;
    let last = events.iter().rev().find_map(|e| match &e.body {
        EventBody::ChatOut(o) => Some(o.clone()),
        _ => None,
    });
    Ok(Json(ChatResponse {
        reply: last.as_ref().map(|o| o.text.clone()).unwrap_or_default(),
        shortlist: last
            .as_ref()
            .and_then(|o| o.shortlist.as_ref())
            .map(|s| serde_json::to_value(s).expect("shortlist serializes")),
        error: last.and_then(|o| o.error),
        events,
    }))
}

async fn confirm_route(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<Timed>>,
) -> Result<Json<EventsResponse>, ApiError> {
    let t = body.map(|b| b.0.t).unwrap_or_default();
    let h = app.session(&id)?;
    let events = blocking(move || h.exec(|e, now| e.confirm_route(at(now, t)))).await?;
    Ok(Json(EventsResponse { events }))
}

async fn start(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<Timed>>,
) -> Result<Json<EventsResponse>, ApiError> {
    let t = body.map(|b| b.0.t).unwrap_or_default();
    let h = app.session(&id)?;
    let events = blocking(move || h.exec(|e, now| e.start_walk(at(now, t)))).await?;
    Ok(Json(EventsResponse { events }))
}

async fn ticks(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body_<TickBatch>,
) -> Result<Json<EventsResponse>, ApiError> {
    let Json(batch) = body.map_err(json_err)?;
    let h = app.session(&id)?;
    let events = blocking(move || {
        h.exec(|e, _| {
            let mut out = Vec::new();
            for tick in batch.into_vec() {
                out.extend(e.ingest_tick(&tick)?);
            }
            Ok(out)
        })
    })
    .await?;
    Ok(Json(EventsResponse { events }))
}

async fn feedback(
    State(app): State<Arc<AppState>>,
    Path((id, pid)): Path<(String, String)>,
    body: Body_<FeedbackRequest>,
) -> Result<Json<EventsResponse>, ApiError> {
    let Json(req) = body.map_err(json_err)?;
    let h = app.session(&id)?;
    let events = blocking(move || h.exec(|e, now| e.feedback(at(now, req.t), &pid, req.feedback))).await?;
    Ok(Json(EventsResponse { events }))
}

async fn finish(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<Timed>>,
) -> Result<Json<WalkSummary>, ApiError> {
    let t = body.map(|b| b.0.t).unwrap_or_default();
    let h = app.session(&id)?;
    let (_, summary) = blocking(move || h.exec(|e, now| e.finish(at(now, t)))).await?;
    Ok(Json(summary))
}

async fn close(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<Timed>>,
) -> Result<Json<EventsResponse>, ApiError> {
    let t = body.map(|b| b.0.t).unwrap_or_default();
    let h = app.session(&id)?;
    let events = blocking(move || h.exec(|e, now| e.close(at(now, t)))).await?;
    Ok(Json(EventsResponse { events }))
}

async fn log(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = app.session(&id)?;
    let text = h.read(|e| e.state().to_jsonl());
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

/// Log snapshot followed by live events; ends once the session closes.
async fn events(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = app.session(&id)?;
    let (snapshot, rx, done) = {
        let inner = h.inner.lock().expect("session poisoned");
        let log = &inner.engine.state().event_log[..inner.published];
        let lines: Vec<Result<Bytes, std::io::Error>> = log
            .iter()
            .map(|e| Ok(Bytes::from(event_to_json(e) + "\n")))
            .collect();
        // subscribe under the lock so nothing falls between snapshot and tail
        (lines, h.tx.subscribe(), inner.engine.state().phase == Phase::Closed)
    };
    let tail = stream::unfold((rx, done), |(mut rx, done)| async move {
        if done {
            return None;
        }
        match rx.recv().await {
            Ok(p) => Some((Ok(Bytes::from(p.line.to_string())), (rx, p.closes))),
            // lagging or dropped subscribers reconnect and replay the log
            Err(_) => None,
        }
    });
    let body = Body::from_stream(stream::iter(snapshot).chain(tail));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

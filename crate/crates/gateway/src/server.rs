//! HTTP and WebSocket surface.
//!
//! | method | path                     | body / query                                   |
//! |--------|--------------------------|------------------------------------------------|
//! | POST   | `/trigger`               | `{event, strategy, source?}`                   |
//! | POST   | `/trial/start`           | `{strategy, seed, trial_index?, load?, ...}`   |
//! | POST   | `/trial/stop`            |                                                |
//! | POST   | `/trial/response`        | `{chosen, client_t?}`                          |
//! | POST   | `/training`              | `{active, cap_ms?}`                            |
//! | POST   | `/load`                  | `{load}`                                       |
//! | POST   | `/calibrate-north`       | `{north?}`                                     |
//! | POST   | `/odometry`              | JSON lines of `{t, x, y, theta}`               |
//! | POST   | `/path`                  | `{drawn, truth?}`, stored verbatim             |
//! | GET    | `/stream`                | WebSocket: frames `{"t","i"}` and log records  |
//! | GET    | `/topology`, `/patterns` |                                                |
//! | GET    | `/stats`                 |                                                |
//! | GET    | `/sessions`              | list; POST starts a new session                |
//! | GET    | `/sessions/{id}/export`  | `?format=table` for text                       |
//! | GET    | `/sessions/{id}/events`  | raw JSON lines                                 |
//! | GET    | `/sessions/{id}/frames`  | frame dump CSV                                 |
//! | GET    | `/metrics`               | `?ids=a,b&format=table`                        |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::{Body, Bytes};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

use tactvest_analytics::log::{MentalLoad, StimulusSource};
use tactvest_analytics::schedule::{make_schedule, JobDurations, DEFAULT_MIN_GAP_MS, DEFAULT_STIMULI, DEFAULT_TRIAL_MS};
use tactvest_core::mixer::{Mixer, MixerError};
use tactvest_core::{CodingStrategy, EventKind, PatternLibrary};

use crate::engine::{EngineConfig, EngineError, Input, NorthMode};
use crate::export::{export_metrics, PathSubmission};
use crate::ingest::{LineSplitter, OdometryIngest};
use crate::live::{self, Command, LiveHandle};
use crate::store::{SessionStore, StoreError, EVENTS_FILE, FRAMES_FILE};

pub const DEFAULT_TRAINING_CAP_MS: u64 = 10 * 60 * 1000;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: std::net::IpAddr,
    pub port: u16,
    pub tick_ms: u32,
    pub patterns_dir: Option<PathBuf>,
    pub sessions_dir: PathBuf,
    pub north: NorthMode,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is in use")]
    PortInUse(u16),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct App {
    live: LiveHandle,
    store: SessionStore,
    library: Arc<PatternLibrary>,
    engine: EngineConfig,
    durations: [JobDurations; 2],
    ingest: Mutex<OdometryIngest>,
}

type Shared = Arc<App>;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Mixer(MixerError::QueueFull { .. }) => StatusCode::SERVICE_UNAVAILABLE,
            EngineError::TrialActive | EngineError::NoTrial | EngineError::NoOdometry => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StoreError::InvalidId(_) => StatusCode::BAD_REQUEST,
            StoreError::Incomplete(_) | StoreError::Exists(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

fn loop_gone() -> ApiError {
    ApiError(StatusCode::SERVICE_UNAVAILABLE, "mixer loop stopped".into())
}

fn durations_for(library: &Arc<PatternLibrary>, engine: &EngineConfig) -> [JobDurations; 2] {
    let mixer = Mixer::new(engine.mixer, library.clone());
    CodingStrategy::ALL.map(|s| JobDurations::for_mixer(&mixer, s))
}

/// A server bound and running in the background.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub live: LiveHandle,
    first_session: String,
    store: SessionStore,
    stop: oneshot::Sender<()>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
    mixer: JoinHandle<()>,
}

impl RunningServer {
    pub fn first_session(&self) -> &str {
        &self.first_session
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    /// Stop accepting requests, close the current session and join the loop.
    pub async fn stop(self) -> std::io::Result<()> {
        let _ = self.stop.send(());
        self.task.await.map_err(std::io::Error::other)??;
        let _ = self.live.request(Command::Shutdown).await;
        tokio::task::spawn_blocking(move || self.mixer.join())
            .await
            .map_err(std::io::Error::other)?
            .map_err(|_| std::io::Error::other("mixer loop panicked"))
    }
}

pub async fn start(cfg: ServeConfig) -> Result<RunningServer, ServeError> {
    let mut engine = EngineConfig::new(cfg.tick_ms);
    engine.north = cfg.north;
    engine.validate().map_err(ServeError::InvalidConfig)?;
    let library = match &cfg.patterns_dir {
        Some(dir) => PatternLibrary::with_overrides(dir).map_err(|e| ServeError::InvalidConfig(e.to_string()))?,
        None => PatternLibrary::builtin().clone(),
    };
    let library = Arc::new(library);
    let store = SessionStore::open(&cfg.sessions_dir)?;

    let listener = tokio::net::TcpListener::bind((cfg.bind, cfg.port)).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(cfg.port),
        _ => ServeError::Io(e),
    })?;
    let addr = listener.local_addr()?;

    let writer = store.create(None, engine, &library, None)?;
    let first_session = writer.id().to_string();
    let (live, mixer) = live::spawn(engine, library.clone(), writer);
    let app = Arc::new(App {
        ingest: Mutex::new(OdometryIngest::new(
            Arc::new(Default::default()),
            Arc::new(Default::default()),
        )),
        durations: durations_for(&library, &engine),
        live: live.clone(),
        store: store.clone(),
        library,
        engine,
    });

    let (stop, stopped) = oneshot::channel::<()>();
    let router = router(app);
    let task = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    tracing::info!(%addr, session = %first_session, "serving");
    Ok(RunningServer {
        addr,
        live,
        first_session,
        store,
        stop,
        task,
        mixer,
    })
}

fn router(app: Shared) -> Router {
    Router::new()
        .route("/trigger", post(trigger))
        .route("/trial/start", post(trial_start))
        .route("/trial/stop", post(trial_stop))
        .route("/trial/response", post(trial_response))
        .route("/training", post(training))
        .route("/load", post(load))
        .route("/calibrate-north", post(calibrate))
        .route("/odometry", post(odometry))
        .route("/path", post(path))
        .route("/stream", get(stream))
        .route("/topology", get(topology))
        .route("/patterns", get(patterns))
        .route("/stats", get(stats))
        .route("/sessions", get(list_sessions).post(new_session))
        .route("/sessions/{id}/export", get(export_session))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/frames", get(session_frames))
        .route("/metrics", get(metrics))
        .with_state(app)
}

async fn apply(app: &App, input: Input) -> Result<crate::engine::Applied, ApiError> {
    app.live.apply(input).await.ok_or_else(loop_gone)?.map_err(ApiError::from)
}

#[derive(Deserialize)]
struct TriggerReq {
    event: EventKind,
    strategy: CodingStrategy,
    #[serde(default)]
    source: Option<StimulusSource>,
}

async fn trigger(State(app): State<Shared>, Json(req): Json<TriggerReq>) -> Result<Json<Value>, ApiError> {
    let a = apply(
        &app,
        Input::Trigger {
            event: req.event,
            strategy: req.strategy,
            source: req.source.unwrap_or(StimulusSource::Manual),
        },
    )
    .await?;
    Ok(Json(json!({ "job_id": a.job_id, "record": a.record })))
}

#[derive(Deserialize)]
struct TrialStartReq {
    strategy: CodingStrategy,
    seed: u64,
    #[serde(default)]
    trial_index: Option<u32>,
    #[serde(default)]
    load: Option<MentalLoad>,
    #[serde(default)]
    participant: Option<String>,
    #[serde(default)]
    stimuli: Option<usize>,
    #[serde(default)]
    duration_ms: Option<u64>,
    #[serde(default)]
    min_gap_ms: Option<u64>,
}

async fn trial_start(State(app): State<Shared>, Json(req): Json<TrialStartReq>) -> Result<Json<Value>, ApiError> {
    let durations = &app.durations[CodingStrategy::ALL.iter().position(|s| *s == req.strategy).expect("strategy listed")];
    let schedule = make_schedule(
        req.seed,
        req.stimuli.unwrap_or(DEFAULT_STIMULI),
        req.duration_ms.unwrap_or(DEFAULT_TRIAL_MS),
        req.min_gap_ms.unwrap_or(DEFAULT_MIN_GAP_MS),
        durations,
    )
    .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let trial_index = req.trial_index.unwrap_or(1);
    let a = apply(
        &app,
        Input::TrialStart {
            trial_index,
            strategy: req.strategy,
            load: req.load.unwrap_or(MentalLoad::for_trial_index(trial_index)),
            participant: req.participant.unwrap_or_else(|| "anonymous".into()),
            schedule,
        },
    )
    .await?;
    Ok(Json(json!({ "record": a.record })))
}

async fn trial_stop(State(app): State<Shared>) -> Result<Json<Value>, ApiError> {
    let a = apply(&app, Input::TrialStop).await?;
    Ok(Json(json!({ "record": a.record })))
}

#[derive(Deserialize)]
struct ResponseReq {
    chosen: EventKind,
    #[serde(default)]
    client_t: Option<u64>,
}

async fn trial_response(State(app): State<Shared>, Json(req): Json<ResponseReq>) -> Result<Json<Value>, ApiError> {
    let t = app
        .live
        .request(|reply| Command::Respond {
            chosen: req.chosen,
            client_t: req.client_t,
            reply: Some(reply),
        })
        .await
        .ok_or_else(loop_gone)?;
    Ok(Json(json!({ "t": t })))
}

#[derive(Deserialize)]
struct TrainingReq {
    active: bool,
    #[serde(default)]
    cap_ms: Option<u64>,
}

async fn training(State(app): State<Shared>, Json(req): Json<TrainingReq>) -> Result<Json<Value>, ApiError> {
    let a = apply(
        &app,
        Input::Training {
            active: req.active,
            cap_ms: req.cap_ms.unwrap_or(DEFAULT_TRAINING_CAP_MS),
        },
    )
    .await?;
    Ok(Json(json!({ "record": a.record })))
}

#[derive(Deserialize)]
struct LoadReq {
    load: MentalLoad,
}

async fn load(State(app): State<Shared>, Json(req): Json<LoadReq>) -> Result<Json<Value>, ApiError> {
    let a = apply(&app, Input::Load(req.load)).await?;
    Ok(Json(json!({ "record": a.record })))
}

#[derive(Deserialize, Default)]
struct CalibrateReq {
    #[serde(default)]
    north: Option<f64>,
}

async fn calibrate(State(app): State<Shared>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: CalibrateReq = if body.iter().all(u8::is_ascii_whitespace) {
        CalibrateReq::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let a = apply(&app, Input::Calibrate { north: req.north }).await?;
    Ok(Json(json!({ "record": a.record })))
}

async fn odometry(State(app): State<Shared>, body: Body) -> Result<Json<Value>, ApiError> {
    let mut data = body.into_data_stream();
    let mut split = LineSplitter::default();
    let (mut accepted, mut rejected) = (0u64, 0u64);
    let mut handle = |chunk: Option<&[u8]>, split: &mut LineSplitter| {
        let mut batch = Vec::new();
        {
            let mut ing = app.ingest.lock().expect("ingest lock");
            let mut each = |line: &[u8]| match ing.line(line) {
                Some(Ok(s)) => batch.push(s),
                Some(Err(_)) => rejected += 1,
                None => {}
            };
            match chunk {
                Some(c) => split.push(c, &mut each),
                None => split.finish(&mut each),
            }
        }
        accepted += batch.len() as u64;
        for s in batch {
            let _ = app.live.commands.send(Command::Apply {
                input: Input::Odometry(s),
                reply: None,
            });
        }
    };
    while let Some(chunk) = data.next().await {
        let chunk = chunk.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
        handle(Some(&chunk), &mut split);
    }
    handle(None, &mut split);
    Ok(Json(json!({ "accepted": accepted, "rejected": rejected })))
}

async fn path(State(app): State<Shared>, body: Bytes) -> Result<Json<Value>, ApiError> {
    serde_json::from_slice::<PathSubmission>(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let file = app
        .live
        .request(|reply| Command::SavePath {
            bytes: body.to_vec(),
            reply,
        })
        .await
        .ok_or_else(loop_gone)?
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    Ok(Json(json!({ "file": file })))
}

async fn stream(ws: WebSocketUpgrade, State(app): State<Shared>) -> Response {
    ws.on_upgrade(move |socket| stream_client(socket, app))
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMessage {
    Response {
        chosen: EventKind,
        #[serde(default)]
        client_t: Option<u64>,
    },
    Trigger {
        event: EventKind,
        strategy: CodingStrategy,
        #[serde(default)]
        source: Option<StimulusSource>,
    },
}

async fn stream_client(socket: WebSocket, app: Shared) {
    let mut rx = app.live.stream.subscribe();
    let (mut tx, mut incoming) = socket.split();
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if tx.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => tracing::debug!("stream client lagged {n} messages"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = incoming.next() => match msg {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientMessage>(text.as_str()) {
                    Ok(ClientMessage::Response { chosen, client_t }) => {
                        let _ = app.live.commands.send(Command::Respond { chosen, client_t, reply: None });
                    }
                    Ok(ClientMessage::Trigger { event, strategy, source }) => {
                        let _ = app.live.commands.send(Command::Apply {
                            input: Input::Trigger { event, strategy, source: source.unwrap_or(StimulusSource::Manual) },
                            reply: None,
                        });
                    }
                    Err(e) => tracing::debug!("ignored stream message: {e}"),
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn topology() -> Json<tactvest_core::vest::Topology> {
    Json(tactvest_core::vest::topology())
}

async fn patterns(State(app): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], app.library.to_json()).into_response()
}

async fn stats(State(app): State<Shared>) -> Result<Json<Value>, ApiError> {
    let status = app.live.request(Command::Status).await.ok_or_else(loop_gone)?;
    let (accepted, rejected) = {
        let ing = app.ingest.lock().expect("ingest lock");
        (ing.accepted(), ing.rejected())
    };
    let s = &app.live.stats;
    Ok(Json(json!({
        "status": status,
        "ticks": s.ticks.load(Ordering::Relaxed),
        "accepted_lines": accepted,
        "rejected_lines": rejected,
        "write_errors": s.write_errors.load(Ordering::Relaxed),
        "tick_ms": app.engine.tick_ms,
    })))
}

async fn list_sessions(State(app): State<Shared>) -> Result<Json<Value>, ApiError> {
    let ids = app.store.list()?;
    let current = app.live.request(Command::Status).await.map(|s| s.session);
    Ok(Json(json!({ "sessions": ids, "current": current })))
}

#[derive(Deserialize, Default)]
struct NewSessionReq {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    participant: Option<String>,
}

async fn new_session(State(app): State<Shared>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: NewSessionReq = if body.iter().all(u8::is_ascii_whitespace) {
        NewSessionReq::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let app2 = app.clone();
    let writer = tokio::task::spawn_blocking(move || {
        app2.store.create(req.id.as_deref(), app2.engine, &app2.library, req.participant)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let id = app
        .live
        .request(|reply| Command::NewSession { writer: Box::new(writer), reply })
        .await
        .ok_or_else(loop_gone)?;
    app.ingest.lock().expect("ingest lock").reset();
    Ok(Json(json!({ "id": id })))
}

#[derive(Deserialize, Default)]
struct FormatQuery {
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    ids: Option<String>,
}

async fn export_ids(app: Shared, ids: Vec<String>, table: bool) -> Result<Response, ApiError> {
    let report = tokio::task::spawn_blocking(move || export_metrics(&app.store, &ids))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(if table {
        report.to_table().into_response()
    } else {
        Json(report).into_response()
    })
}

async fn export_session(State(app): State<Shared>, Path(id): Path<String>, Query(q): Query<FormatQuery>) -> Result<Response, ApiError> {
    export_ids(app, vec![id], q.format.as_deref() == Some("table")).await
}

async fn metrics(State(app): State<Shared>, Query(q): Query<FormatQuery>) -> Result<Response, ApiError> {
    let ids = q
        .ids
        .as_deref()
        .map(|s| s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
        .unwrap_or_default();
    export_ids(app, ids, q.format.as_deref() == Some("table")).await
}

async fn session_file(app: &App, id: &str, name: &str, mime: &'static str) -> Result<Response, ApiError> {
    let bytes = app.store.read_file(id, name)?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn session_events(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    session_file(&app, &id, EVENTS_FILE, "application/x-ndjson").await
}

async fn session_frames(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    session_file(&app, &id, FRAMES_FILE, "text/csv").await
}

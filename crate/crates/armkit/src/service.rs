//! HTTP API over the registry, session driver and stores. One session at a
//! time; live telemetry is newline-delimited JSON.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use armkit_core::protocol::encode_record;
use armkit_core::session::{Mode, SessionEvent, SessionState, COUNTDOWN_S, DROPOUT_S};
use armkit_core::therapy::{Demographics, Limb};
use armkit_core::{Catalog, TherapyCode};
use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::sync::broadcast;
use tokio::task::JoinHandle;

use crate::analysis::{generate_score, ScoreError};
use crate::driver::{DriverError, SessionConfig, SessionDriver, Telemetry, TelemetryKind, CALIBRATION_S};
use crate::ingest::LineIngest;
use crate::registry::{PatientRegistry, RegistryError};
use crate::sim::{synthesize_session, MotionProfile};
use crate::store::{new_session_id, DataDir, StoreError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub listen: String,
    pub default_duration_s: f64,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    data: DataDir,
    catalog: Catalog,
    default_duration_s: f64,
    registry_writer: tokio::sync::Mutex<()>,
    session: Mutex<Option<Active>>,
}

struct Active {
    driver: Arc<Mutex<SessionDriver>>,
    tx: broadcast::Sender<Published>,
    source: Source,
    task: Option<JoinHandle<()>>,
}

/// A serialized telemetry line and whether it ends the live stream.
#[derive(Clone)]
struct Published {
    line: Arc<str>,
    last: bool,
}

impl AppState {
    pub fn new(data: DataDir, default_duration_s: f64) -> Result<Self, StoreError> {
        let catalog = data.load_catalog()?;
        Ok(AppState {
            inner: Arc::new(Inner {
                data,
                catalog,
                default_duration_s,
                registry_writer: tokio::sync::Mutex::new(()),
                session: Mutex::new(None),
            }),
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/patients", post(register_patient).get(list_patients))
        .route("/patients/{id}/history", get(history))
        .route("/therapies", get(therapies))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/events", post(session_event))
        .route("/sessions/{id}/live", get(live))
        .route("/records/{id}", delete(delete_record))
        .route("/scores", post(scores))
        .route("/rpmv/{therapy}", get(rpmv))
        .with_state(state)
}

/// Binds and serves until Ctrl-C. `on_bound` receives the local address.
pub async fn serve(config: ServiceConfig, on_bound: impl FnOnce(SocketAddr)) -> Result<(), ServeError> {
    let data = DataDir::open(&config.data_dir)?;
    let state = AppState::new(data, config.default_duration_s)?;
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|source| ServeError::Bind { endpoint: config.listen.clone(), source })?;
    let addr = listener.local_addr().map_err(ServeError::Io)?;
    tracing::info!(%addr, data_dir = %config.data_dir.display(), "serving");
    on_bound(addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServeError::Io)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot listen on {endpoint}: {source}")]
    Bind { endpoint: String, source: std::io::Error },
    #[error(transparent)]
    Io(std::io::Error),
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl ToString) -> Self {
        ApiError { status, code, message: message.to_string() }
    }

    fn not_found(message: impl ToString) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn invalid(message: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::not_found(e),
            StoreError::BadId(_) => ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e),
            StoreError::MissingRpmv(_) => ApiError::new(StatusCode::PRECONDITION_FAILED, "missing_rpmv", e),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e),
        }
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::Invalid(_) => ApiError::invalid(e),
            RegistryError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", e),
            RegistryError::NotFound(_) => ApiError::not_found(e),
            RegistryError::Store(s) => s.into(),
        }
    }
}

impl From<DriverError> for ApiError {
    fn from(e: DriverError) -> Self {
        match e {
            DriverError::Transition(_) => ApiError::new(StatusCode::CONFLICT, "illegal_transition", e),
            DriverError::InvalidDuration(_) | DriverError::InternalEvent(_) => ApiError::invalid(e),
            DriverError::Store(s) => s.into(),
            _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "session", e),
        }
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Registry(r) => r.into(),
            ScoreError::NoTherapies | ScoreError::InsufficientSessions(_) => ApiError::invalid(e),
            ScoreError::MissingRpmv(_) => ApiError::new(StatusCode::PRECONDITION_FAILED, "missing_rpmv", e),
            ScoreError::Scoring(_) => ApiError::invalid(e),
            ScoreError::Store(s) => s.into(),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_therapy(s: &str) -> ApiResult<TherapyCode> {
    s.parse().map_err(|e: armkit_core::therapy::CatalogError| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e))
}

async fn register_patient(State(s): State<AppState>, Json(demo): Json<Demographics>) -> ApiResult<Response> {
    let _writer = s.inner.registry_writer.lock().await;
    let record = PatientRegistry::new(&s.inner.data).register(demo)?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn list_patients(State(s): State<AppState>) -> ApiResult<Response> {
    Ok(Json(PatientRegistry::new(&s.inner.data).list()?).into_response())
}

async fn therapies(State(s): State<AppState>) -> Response {
    Json(&s.inner.catalog).into_response()
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    therapy: Option<String>,
}

async fn history(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HistoryQuery>,
) -> ApiResult<Response> {
    let patient = PatientRegistry::new(&s.inner.data).get(&id)?;
    let therapy = q.therapy.as_deref().filter(|t| !t.is_empty()).map(parse_therapy).transpose()?;
    Ok(Json(s.inner.data.sessions().history(&patient.patient_id, therapy)?).into_response())
}

async fn delete_record(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    s.inner.data.sessions().delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct ScoreRequest {
    patient_id: String,
    therapies: Vec<String>,
}

async fn scores(State(s): State<AppState>, Json(req): Json<ScoreRequest>) -> ApiResult<Response> {
    let codes = req.therapies.iter().map(|t| parse_therapy(t)).collect::<ApiResult<Vec<_>>>()?;
    let (report, path) = generate_score(&s.inner.data, &req.patient_id, &codes, Utc::now())?;
    let mut body = serde_json::to_value(&report).expect("report serializes");
    body["csv_row"] = report.csv_row().into();
    body["stored_at"] = path.display().to_string().into();
    Ok(Json(body).into_response())
}

async fn rpmv(State(s): State<AppState>, Path(therapy): Path<String>) -> ApiResult<Response> {
    let code = parse_therapy(&therapy)?;
    Ok(Json(s.inner.data.rpmvs().load(code)?).into_response())
}

/// Where a session's frames come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    /// Built-in simulator. The motion lasts the session duration and is
    /// preceded by `hold_s` of stillness for calibration and countdown.
    Simulated {
        #[serde(default = "half")]
        amplitude_fraction: f64,
        #[serde(default = "half")]
        frequency_hz: f64,
        #[serde(default)]
        noise_deg: f64,
        #[serde(default)]
        drift_deg_per_min: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_hold")]
        hold_s: f64,
        /// Multiple of real time; 0 runs unpaced.
        #[serde(default = "one")]
        speed: f64,
    },
    /// Wait for the wearable to connect to this address.
    TcpListen { endpoint: String },
    /// Connect to a wearable listening at this address.
    TcpConnect { endpoint: String },
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

fn default_hold() -> f64 {
    CALIBRATION_S + COUNTDOWN_S
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    patient_id: String,
    therapy: String,
    #[serde(default)]
    mode: Mode,
    #[serde(default = "right")]
    arm: Limb,
    duration_s: Option<f64>,
    source: Source,
}

fn right() -> Limb {
    Limb::Right
}

async fn create_session(State(s): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<Response> {
    let patient = PatientRegistry::new(&s.inner.data).get(&req.patient_id)?;
    let therapy = parse_therapy(&req.therapy)?;
    let config = SessionConfig {
        patient_id: patient.patient_id,
        therapy,
        mode: req.mode,
        arm: req.arm,
        duration_s: req.duration_s.unwrap_or(s.inner.default_duration_s),
    };
    if let Source::Simulated { amplitude_fraction, frequency_hz, noise_deg, drift_deg_per_min, hold_s, .. } =
        &req.source
    {
        sim_profile(&config, *amplitude_fraction, *frequency_hz, *noise_deg, *drift_deg_per_min, *hold_s)
            .validate()
            .map_err(ApiError::invalid)?;
    }
    let mut slot = s.inner.session.lock().unwrap();
    if let Some(active) = slot.as_ref() {
        let st = active.driver.lock().unwrap().state();
        if !matches!(st, SessionState::Idle | SessionState::Saved | SessionState::Discarded) {
            return Err(ApiError::new(StatusCode::CONFLICT, "busy", "another session is in progress"));
        }
        if let Some(t) = &active.task {
            t.abort();
        }
    }
    let id = new_session_id(therapy, Utc::now());
    let driver = SessionDriver::new(id.clone(), config, &s.inner.catalog)?;
    tracing::info!(session = %id, therapy = %therapy, "session created");
    let status = driver.status();
    let (tx, _) = broadcast::channel(1024);
    *slot = Some(Active { driver: Arc::new(Mutex::new(driver)), tx, source: req.source, task: None });
    Ok((StatusCode::CREATED, Json(status)).into_response())
}

fn sim_profile(
    config: &SessionConfig,
    amplitude_fraction: f64,
    frequency_hz: f64,
    noise_deg: f64,
    drift_deg_per_min: f64,
    hold_s: f64,
) -> MotionProfile {
    MotionProfile {
        therapy: config.therapy,
        amplitude_fraction,
        frequency_hz,
        duration_s: config.duration_s,
        noise_std_deg: noise_deg,
        drift_deg_per_min,
        sample_rate_hz: armkit_core::SAMPLE_RATE_HZ,
        hold_s,
    }
}

fn with_session<T>(s: &AppState, id: &str, f: impl FnOnce(&mut Active) -> ApiResult<T>) -> ApiResult<T> {
    let mut slot = s.inner.session.lock().unwrap();
    match slot.as_mut() {
        Some(a) if a.driver.lock().unwrap().id() == id => f(a),
        _ => Err(ApiError::not_found(format!("no session `{id}`"))),
    }
}

async fn session_status(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    with_session(&s, &id, |a| Ok(Json(a.driver.lock().unwrap().status()).into_response()))
}

#[derive(Debug, Deserialize)]
struct EventRequest {
    event: SessionEvent,
}

async fn session_event(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<EventRequest>,
) -> ApiResult<Response> {
    let data = s.inner.data.clone();
    with_session(&s, &id, |a| {
        let mut record = None;
        {
            let mut d = a.driver.lock().unwrap();
            let result = match req.event {
                SessionEvent::Save => d.save(&data.sessions()).map(|m| {
                    record = Some(m);
                    d.state()
                }),
                e => d.handle(e),
            };
            publish(&mut d, &a.tx);
            result?;
        }
        match req.event {
            SessionEvent::Connect => {
                a.task = Some(spawn_ingest(a.driver.clone(), a.tx.clone(), a.source.clone()));
            }
            SessionEvent::Abort => {
                if let Some(t) = a.task.take() {
                    t.abort();
                }
            }
            _ => {}
        }
        let status = a.driver.lock().unwrap().status();
        let mut body = serde_json::to_value(status).expect("status serializes");
        if let Some(m) = record {
            body["record"] = serde_json::to_value(m).expect("meta serializes");
        }
        Ok(Json(body).into_response())
    })
}

fn is_final(t: &Telemetry, driver: &SessionDriver) -> bool {
    match &t.kind {
        TelemetryKind::State { to, .. } => {
            matches!(to, SessionState::Idle | SessionState::Saved | SessionState::Discarded)
                || (*to == SessionState::Stopped && driver.config().mode == Mode::Passive)
        }
        _ => false,
    }
}

fn publish(driver: &mut SessionDriver, tx: &broadcast::Sender<Published>) {
    for t in driver.drain() {
        let last = is_final(&t, driver);
        let line: Arc<str> = (serde_json::to_string(&t).expect("telemetry serializes") + "\n").into();
        let _ = tx.send(Published { line, last });
    }
}

async fn live(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (rx, first, done) = with_session(&s, &id, |a| {
        let d = a.driver.lock().unwrap();
        let status = d.status();
        let done = matches!(status.state, SessionState::Saved | SessionState::Discarded);
        let mut first = serde_json::to_value(status).expect("status serializes");
        first["type"] = "status".into();
        Ok((a.tx.subscribe(), first.to_string() + "\n", done))
    })?;
    let head = futures::stream::once(async move { Ok::<_, Infallible>(first) });
    let tail = futures::stream::unfold((rx, done), |(mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(p) => return Some((Ok::<_, Infallible>(p.line.to_string()), (rx, p.last))),
                // A slow reader skips ahead; it never sees messages out of order.
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let body = Body::from_stream(futures::StreamExt::chain(head, tail));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

fn spawn_ingest(driver: Arc<Mutex<SessionDriver>>, tx: broadcast::Sender<Published>, source: Source) -> JoinHandle<()> {
    tokio::spawn(async move {
        let result = match source {
            Source::Simulated {
                amplitude_fraction,
                frequency_hz,
                noise_deg,
                drift_deg_per_min,
                seed,
                hold_s,
                speed,
            } => {
                let config = driver.lock().unwrap().config().clone();
                let profile = sim_profile(&config, amplitude_fraction, frequency_hz, noise_deg, drift_deg_per_min, hold_s);
                run_simulated(&driver, &tx, profile, seed, speed).await
            }
            Source::TcpListen { endpoint } => match tokio::net::TcpListener::bind(&endpoint).await {
                Ok(l) => match l.accept().await {
                    Ok((stream, _)) => run_lines(&driver, &tx, BufReader::new(stream)).await,
                    Err(e) => Err(e.to_string()),
                },
                Err(e) => Err(format!("cannot listen on {endpoint}: {e}")),
            },
            Source::TcpConnect { endpoint } => match tokio::net::TcpStream::connect(&endpoint).await {
                Ok(stream) => run_lines(&driver, &tx, BufReader::new(stream)).await,
                Err(e) => Err(format!("cannot connect to {endpoint}: {e}")),
            },
        };
        if let Err(msg) = result {
            let mut d = driver.lock().unwrap();
            tracing::warn!(session = d.id(), "ingest stopped: {msg}");
            d.warn(msg);
            if d.is_streaming() {
                let _ = d.handle(SessionEvent::Abort);
            }
            publish(&mut d, &tx);
        }
    })
}

async fn run_simulated(
    driver: &Mutex<SessionDriver>,
    tx: &broadcast::Sender<Published>,
    profile: MotionProfile,
    seed: u64,
    speed: f64,
) -> Result<(), String> {
    let catalog = Catalog::builtin();
    let sim = synthesize_session(profile, &catalog, seed).map_err(|e| e.to_string())?;
    let start = tokio::time::Instant::now();
    let mut ingest = LineIngest::default();
    for record in sim.records() {
        if speed > 0.0 {
            if let armkit_core::protocol::Record::Sample(f) = &record {
                tokio::time::sleep_until(start + Duration::from_secs_f64(f.t_ms as f64 / 1000.0 / speed)).await;
            }
        }
        let mut d = driver.lock().unwrap();
        if !d.is_streaming() {
            break;
        }
        ingest.feed(&mut d, &encode_record(&record)).map_err(|e| e.to_string())?;
        publish(&mut d, tx);
    }
    // Let other tasks run between sessions driven flat out.
    tokio::task::yield_now().await;
    Ok(())
}

async fn run_lines<R: tokio::io::AsyncBufRead + Unpin>(
    driver: &Mutex<SessionDriver>,
    tx: &broadcast::Sender<Published>,
    reader: R,
) -> Result<(), String> {
    let mut lines = reader.lines();
    let mut ingest = LineIngest::default();
    loop {
        let next = tokio::time::timeout(Duration::from_secs_f64(DROPOUT_S), lines.next_line()).await;
        let mut d = driver.lock().unwrap();
        if !d.is_streaming() {
            return Ok(());
        }
        match next {
            Err(_) => {
                // Silence before the first frame is just a slow wearable.
                if d.state() != SessionState::Connecting {
                    d.dropout();
                }
            }
            Ok(Ok(Some(line))) => ingest.feed(&mut d, &line).map_err(|e| e.to_string())?,
            Ok(Ok(None)) => d.end_of_stream(),
            Ok(Err(e)) => {
                d.warn(format!("read failed: {e}"));
                d.end_of_stream();
            }
        }
        publish(&mut d, tx);
    }
}

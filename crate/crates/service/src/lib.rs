//! Live dispatch service over the shared decision loop.
//!
//! One owner thread holds the [`Dispatcher`] and drains a FIFO command
//! channel, so at most one decision is ever in flight. HTTP handlers only
//! validate, compute the RV-graph feasibility verdict against the last
//! committed snapshot, and enqueue. Reads are served from an immutable
//! snapshot that the owner republishes after every epoch or clock move.
//!
//! Routes: `POST /session`, `POST /requests[?wait=commit]`,
//! `GET /requests/{id}`, `GET /fleet`, `GET /state`, `GET /metrics`, `POST /clock`,
//! `GET /audit`, `GET /events` (server-sent events `epoch` and `tick`).

pub mod payload;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::{Duration, Instant};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use paratransit_core::model::ModelError;
use paratransit_core::sim::{self, SimError};
use paratransit_core::{
    ChainStore, Constraints, DayMetrics, Dispatcher, FleetState, LocationId, Request, RequestId, RequestParams,
    Seconds, StopKind, TravelMatrix,
};
use serde::Deserialize;
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

pub use payload::*;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    AuditLine {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("invalid session: {0}")]
    Config(String),
}

/// Fixed at startup and shared by every session.
pub struct Resources {
    pub matrix: Arc<TravelMatrix>,
    pub chains: Arc<ChainStore>,
    pub params: RequestParams,
}

impl Resources {
    fn constraints(&self, config: &SessionConfig) -> Constraints {
        Constraints {
            capacity: config.capacity,
            t_max: self.params.day_length,
        }
    }

    fn dispatcher(&self, config: &SessionConfig) -> Result<Dispatcher, ServiceError> {
        if config.fleet_size == 0 {
            return Err(ServiceError::Config("fleet_size must be positive".into()));
        }
        if config.capacity == 0 {
            return Err(ServiceError::Config("capacity must be positive".into()));
        }
        if let ClockSpec::Realtime { speed, .. } = config.clock {
            if !(speed > 0.0 && speed.is_finite()) {
                return Err(ServiceError::Config("clock speed must be positive".into()));
            }
        }
        let chains = config.policy.uses_search().then(|| self.chains.clone());
        let policy = config.policy.build(&config.mcts.budget(), config.mcts.seed, chains)?;
        Ok(Dispatcher::new(
            self.matrix.clone(),
            config.fleet_size,
            self.constraints(config),
            policy,
        ))
    }

    fn request(&self, id: u32, pickup: u32, dropoff: u32, t_req: Seconds) -> Result<Request, ModelError> {
        Request::new(
            RequestId(id),
            LocationId(pickup),
            LocationId(dropoff),
            t_req,
            &self.matrix,
            &self.params,
        )
    }
}

/// Re-runs an audit log through a fresh simulator dispatcher built from the
/// same session config and returns its final state. Matches the session's
/// state exactly whenever decisions are deterministic (iteration budget, no
/// wall-clock cutoff).
pub fn replay_audit(log: &AuditLog, config: &SessionConfig, resources: &Resources) -> Result<FleetState, ServiceError> {
    let epochs = log
        .entries
        .iter()
        .map(|e| Ok((e.epoch, resources.request(e.id, e.pickup, e.dropoff, e.t_req)?)))
        .collect::<Result<Vec<_>, ServiceError>>()?;
    let chains = config.policy.uses_search().then(|| resources.chains.clone());
    let policy = config.policy.build(&config.mcts.budget(), config.mcts.seed, chains)?;
    let d = sim::replay(
        &epochs,
        config.fleet_size,
        resources.constraints(config),
        policy,
        resources.matrix.clone(),
        log.now,
    )?;
    Ok(d.state().clone())
}

/// Reads an audit log file written by a session (one JSON entry per line).
pub fn read_audit_file(path: &Path) -> Result<Vec<AuditEntry>, ServiceError> {
    let io = |source| ServiceError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|source| ServiceError::AuditLine {
            path: path.display().to_string(),
            line: k + 1,
            source,
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// What the owner publishes after every change.
struct Snapshot {
    state: FleetState,
    fleet: FleetView,
    metrics: DayMetrics,
    audit: Arc<Vec<AuditEntry>>,
}

#[derive(Clone)]
enum ServiceEvent {
    Epoch(RequestStatus),
    Tick(FleetView),
}

impl ServiceEvent {
    fn to_sse(&self) -> Event {
        let (name, data) = match self {
            ServiceEvent::Epoch(s) => ("epoch", serde_json::to_string(s)),
            ServiceEvent::Tick(f) => ("tick", serde_json::to_string(f)),
        };
        Event::default().event(name).data(data.expect("payloads serialize"))
    }
}

enum Command {
    Decide {
        request: Request,
        requested: Seconds,
        reply: Option<oneshot::Sender<Result<RequestStatus, String>>>,
    },
    Advance {
        to: Seconds,
        reply: Option<oneshot::Sender<()>>,
    },
}

/// State shared between the owner thread and the handlers.
struct Shared {
    id: u64,
    statuses: Mutex<BTreeMap<u32, RequestStatus>>,
    snapshot: watch::Sender<Arc<Snapshot>>,
    events: broadcast::Sender<ServiceEvent>,
    failed: Mutex<Option<String>>,
}

impl Shared {
    fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    fn failure(&self) -> Option<String> {
        self.failed.lock().unwrap().clone()
    }
}

struct Owner {
    dispatcher: Dispatcher,
    shared: Arc<Shared>,
    audit: Vec<AuditEntry>,
    audit_file: Option<File>,
}

impl Owner {
    fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        while let Some(cmd) = rx.blocking_recv() {
            match cmd {
                Command::Decide {
                    request,
                    requested,
                    reply,
                } => {
                    let outcome = self.decide(request, requested);
                    if let Some(reply) = reply {
                        let _ = reply.send(outcome);
                    }
                }
                Command::Advance { to, reply } => {
                    if self.shared.failure().is_none() {
                        let to = to.max(self.dispatcher.state().now);
                        self.dispatcher.advance_to(to);
                        let fleet = self.publish();
                        let _ = self.shared.events.send(ServiceEvent::Tick(fleet));
                    }
                    if let Some(reply) = reply {
                        let _ = reply.send(());
                    }
                }
            }
        }
        tracing::debug!(session = self.shared.id, "owner stopped");
    }

    fn decide(&mut self, request: Request, requested: Seconds) -> Result<RequestStatus, String> {
        if let Some(reason) = self.shared.failure() {
            return Err(reason);
        }
        let id = request.id;
        let epoch = requested
            .max(self.dispatcher.state().now)
            .max(self.dispatcher.last_epoch().unwrap_or(Seconds::MIN));
        let entry = AuditEntry {
            epoch,
            id: id.0,
            pickup: request.pickup.0,
            dropoff: request.dropoff.0,
            t_req: request.requested_pickup,
            vehicle: None,
        };
        let (serving, compute) = match self.dispatcher.step(epoch, request) {
            Ok(record) => (record.decision.action.serving, record.compute.as_secs_f64()),
            Err(e) => {
                let reason = e.to_string();
                tracing::error!(session = self.shared.id, request = id.0, "{reason}");
                *self.shared.failed.lock().unwrap() = Some(reason.clone());
                return Err(reason);
            }
        };
        let entry = AuditEntry {
            vehicle: serving.map(|v| v.0),
            ..entry
        };
        if let Some(file) = &mut self.audit_file {
            let line = serde_json::to_string(&entry).expect("audit entries serialize");
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                tracing::error!(session = self.shared.id, "audit log write failed: {e}");
            }
        }
        self.audit.push(entry);

        let eta = |kind| {
            let v = serving?;
            let plan = self.dispatcher.state().plan(v);
            plan.stops.iter().find(|s| s.request == id && s.kind == kind).map(|s| s.arrival)
        };
        let (pickup_eta, dropoff_eta) = (eta(StopKind::Pickup), eta(StopKind::Dropoff));
        let status = {
            let mut statuses = self.shared.statuses.lock().unwrap();
            let status = statuses.get_mut(&id.0).expect("status registered before enqueue");
            status.verdict = if serving.is_some() { Verdict::Accepted } else { Verdict::Rejected };
            status.vehicle_id = serving.map(|v| v.0);
            status.pickup_eta = pickup_eta;
            status.dropoff_eta = dropoff_eta;
            status.epoch = Some(epoch);
            status.compute_seconds = Some(compute);
            status.clone()
        };
        tracing::info!(
            session = self.shared.id,
            request = id.0,
            epoch,
            vehicle = ?status.vehicle_id,
            "decided in {compute:.3}s"
        );
        self.publish();
        let _ = self.shared.events.send(ServiceEvent::Epoch(status.clone()));
        Ok(status)
    }

    fn publish(&self) -> FleetView {
        let fleet = FleetView::new(self.shared.id, self.audit.len(), self.dispatcher.state());
        self.shared.snapshot.send_replace(Arc::new(Snapshot {
            state: self.dispatcher.state().clone(),
            fleet: fleet.clone(),
            metrics: self.dispatcher.metrics(),
            audit: Arc::new(self.audit.clone()),
        }));
        fleet
    }
}

#[derive(Debug, Clone, Copy)]
enum Clock {
    Manual,
    Realtime { origin: Instant, start: Seconds, speed: f64 },
}

impl Clock {
    fn now(&self) -> Option<Seconds> {
        match *self {
            Clock::Manual => None,
            Clock::Realtime { origin, start, speed } => {
                Some(start + (origin.elapsed().as_secs_f64() * speed).floor() as Seconds)
            }
        }
    }
}

struct Session {
    config: SessionConfig,
    clock: Clock,
    shared: Arc<Shared>,
    /// Next request id; held while a submission is registered and enqueued
    /// so ids follow queue order.
    next_id: tokio::sync::Mutex<u32>,
    tx: mpsc::UnboundedSender<Command>,
}

impl Session {
    fn start(id: u64, config: SessionConfig, resources: &Resources) -> Result<Arc<Self>, ServiceError> {
        let mut dispatcher = resources.dispatcher(&config)?;
        let audit_file = match &config.audit_log {
            Some(path) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| ServiceError::Io {
                        path: path.display().to_string(),
                        source,
                    })?,
            ),
            None => None,
        };
        let clock = match config.clock {
            ClockSpec::Manual => Clock::Manual,
            ClockSpec::Realtime { start, speed } => {
                dispatcher.advance_to(start);
                Clock::Realtime {
                    origin: Instant::now(),
                    start,
                    speed,
                }
            }
        };
        let fleet = FleetView::new(id, 0, dispatcher.state());
        let (snapshot, _) = watch::channel(Arc::new(Snapshot {
            state: dispatcher.state().clone(),
            fleet,
            metrics: dispatcher.metrics(),
            audit: Arc::new(Vec::new()),
        }));
        let (events, _) = broadcast::channel(1024);
        let shared = Arc::new(Shared {
            id,
            statuses: Mutex::new(BTreeMap::new()),
            snapshot,
            events,
            failed: Mutex::new(None),
        });
        let (tx, rx) = mpsc::unbounded_channel();
        let owner = Owner {
            dispatcher,
            shared: shared.clone(),
            audit: Vec::new(),
            audit_file,
        };
        std::thread::Builder::new()
            .name(format!("dispatch-{id}"))
            .spawn(move || owner.run(rx))
            .map_err(|source| ServiceError::Io {
                path: "owner thread".into(),
                source,
            })?;
        Ok(Arc::new(Self {
            config,
            clock,
            shared,
            next_id: tokio::sync::Mutex::new(0),
            tx,
        }))
    }

    fn send(&self, cmd: Command) -> Result<(), ApiError> {
        self.tx
            .send(cmd)
            .map_err(|_| ApiError::Failed("session owner has stopped".into()))
    }
}

/// Moves the realtime clock forward every `tick` until the session is
/// replaced.
fn spawn_ticker(session: Weak<Session>, tick: Duration) {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(tick);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            interval.tick().await;
            let Some(session) = session.upgrade() else { break };
            let Some(to) = session.clock.now() else { break };
            if session.send(Command::Advance { to, reply: None }).is_err() {
                break;
            }
        }
    });
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no session; POST /session first")]
    NoSession,
    #[error("{0}")]
    Invalid(String),
    #[error("request {0} not found")]
    NotFound(u32),
    #[error("{0}")]
    Conflict(String),
    #[error("session failed: {0}")]
    Failed(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match self {
            ApiError::NoSession | ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Failed(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        (code, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Io { .. } => ApiError::Failed(e.to_string()),
            e => ApiError::Invalid(e.to_string()),
        }
    }
}

/// Handle shared by all routes.
#[derive(Clone)]
pub struct AppState {
    resources: Arc<Resources>,
    session: Arc<RwLock<Option<Arc<Session>>>>,
    sessions: Arc<Mutex<u64>>,
}

impl AppState {
    pub fn new(resources: Resources) -> Self {
        Self {
            resources: Arc::new(resources),
            session: Arc::new(RwLock::new(None)),
            sessions: Arc::new(Mutex::new(0)),
        }
    }

    pub fn resources(&self) -> &Resources {
        &self.resources
    }

    fn session(&self) -> Result<Arc<Session>, ApiError> {
        self.session.read().unwrap().clone().ok_or(ApiError::NoSession)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/requests", post(submit))
        .route("/requests/{id}", get(request_status))
        .route("/fleet", get(fleet))
        .route("/state", get(full_state))
        .route("/metrics", get(metrics))
        .route("/clock", post(set_clock))
        .route("/audit", get(audit))
        .route("/events", get(events))
        .with_state(state)
}

/// Serves the API on `listener` until the process stops.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug, serde::Serialize)]
struct SessionCreated {
    session: u64,
    now: Seconds,
    config: SessionConfig,
}

async fn create_session(
    State(app): State<AppState>,
    Json(config): Json<SessionConfig>,
) -> Result<Json<SessionCreated>, ApiError> {
    let id = {
        let mut n = app.sessions.lock().unwrap();
        *n += 1;
        *n
    };
    let session = Session::start(id, config, &app.resources)?;
    if matches!(session.clock, Clock::Realtime { .. }) {
        spawn_ticker(Arc::downgrade(&session), Duration::from_millis(session.config.tick_ms.max(1)));
    }
    let now = session.shared.snapshot().fleet.now;
    let config = session.config.clone();
    *app.session.write().unwrap() = Some(session);
    tracing::info!(session = id, policy = %config.policy, fleet = config.fleet_size, "session started");
    Ok(Json(SessionCreated { session: id, now, config }))
}

#[derive(Debug, Default, Deserialize)]
struct SubmitQuery {
    wait: Option<String>,
}

async fn submit(
    State(app): State<AppState>,
    Query(query): Query<SubmitQuery>,
    Json(sub): Json<Submission>,
) -> Result<(StatusCode, Json<RequestStatus>), ApiError> {
    let wait = match query.wait.as_deref() {
        None => false,
        Some("commit") => true,
        Some(other) => return Err(ApiError::Invalid(format!("unknown wait mode {other:?} (expected commit)"))),
    };
    let session = app.session()?;
    if let Some(reason) = session.shared.failure() {
        return Err(ApiError::Failed(reason));
    }
    let resources = &app.resources;
    let (status, reply) = {
        let mut next_id = session.next_id.lock().await;
        let request = resources
            .request(*next_id, sub.pickup, sub.dropoff, sub.t_req)
            .map_err(|e| ApiError::Invalid(e.to_string()))?;
        let requested = match (session.clock.now(), sub.now) {
            (Some(_), Some(_)) => {
                return Err(ApiError::Invalid("`now` is only accepted under the manual clock".into()))
            }
            (Some(now), None) => now,
            (None, Some(now)) => now,
            (None, None) => request.arrival_time,
        };
        let snapshot = session.shared.snapshot();
        let metric = session.config.policy.metric();
        let feasible = sim::preview(&snapshot.state, &request, requested, &resources.matrix, metric).is_some();
        let status = RequestStatus {
            id: request.id.0,
            pickup: sub.pickup,
            dropoff: sub.dropoff,
            t_req: sub.t_req,
            pickup_window: [request.earliest_pickup, request.requested_pickup],
            estimated_dropoff: request.requested_pickup + resources.matrix.tt(request.pickup, request.dropoff),
            feasible,
            verdict: Verdict::Pending,
            vehicle_id: None,
            pickup_eta: None,
            dropoff_eta: None,
            epoch: None,
            compute_seconds: None,
        };
        session.shared.statuses.lock().unwrap().insert(status.id, status.clone());
        let (reply, rx) = if wait {
            let (tx, rx) = oneshot::channel();
            (Some(tx), Some(rx))
        } else {
            (None, None)
        };
        session.send(Command::Decide {
            request,
            requested,
            reply,
        })?;
        *next_id += 1;
        (status, rx)
    };
    match reply {
        None => Ok((StatusCode::ACCEPTED, Json(status))),
        Some(rx) => match rx.await {
            Ok(Ok(status)) => Ok((StatusCode::OK, Json(status))),
            Ok(Err(reason)) => Err(ApiError::Failed(reason)),
            Err(_) => Err(ApiError::Failed("session owner has stopped".into())),
        },
    }
}

async fn request_status(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<u32>,
) -> Result<Json<RequestStatus>, ApiError> {
    let session = app.session()?;
    let status = session.shared.statuses.lock().unwrap().get(&id).cloned();
    status.map(Json).ok_or(ApiError::NotFound(id))
}

async fn fleet(State(app): State<AppState>) -> Result<Json<FleetView>, ApiError> {
    let session = app.session()?;
    Ok(Json(session.shared.snapshot().fleet.clone()))
}

/// The committed [`FleetState`] itself, for debugging and replay checks.
async fn full_state(State(app): State<AppState>) -> Result<Json<FleetState>, ApiError> {
    let session = app.session()?;
    Ok(Json(session.shared.snapshot().state.clone()))
}

async fn metrics(State(app): State<AppState>) -> Result<Json<MetricsView>, ApiError> {
    let session = app.session()?;
    let snapshot = session.shared.snapshot();
    let pending = session
        .shared
        .statuses
        .lock()
        .unwrap()
        .values()
        .filter(|s| s.verdict == Verdict::Pending)
        .count();
    Ok(Json(MetricsView::new(
        session.shared.id,
        snapshot.fleet.now,
        &snapshot.metrics,
        pending,
    )))
}

async fn set_clock(State(app): State<AppState>, Json(update): Json<ClockUpdate>) -> Result<Json<FleetView>, ApiError> {
    let session = app.session()?;
    if !matches!(session.clock, Clock::Manual) {
        return Err(ApiError::Conflict("the realtime clock cannot be set".into()));
    }
    let (tx, rx) = oneshot::channel();
    session.send(Command::Advance {
        to: update.now,
        reply: Some(tx),
    })?;
    rx.await
        .map_err(|_| ApiError::Failed("session owner has stopped".into()))?;
    if let Some(reason) = session.shared.failure() {
        return Err(ApiError::Failed(reason));
    }
    Ok(Json(session.shared.snapshot().fleet.clone()))
}

async fn audit(State(app): State<AppState>) -> Result<Json<AuditLog>, ApiError> {
    let session = app.session()?;
    let snapshot = session.shared.snapshot();
    Ok(Json(AuditLog {
        session: session.shared.id,
        now: snapshot.fleet.now,
        entries: snapshot.audit.as_ref().clone(),
    }))
}

async fn events(
    State(app): State<AppState>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = app.session()?;
    let rx = session.shared.events.subscribe();
    let first = ServiceEvent::Tick(session.shared.snapshot().fleet.clone()).to_sse();
    drop(session);
    let rest = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(event) => return Some((Ok(event.to_sse()), rx)),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(futures::stream::once(async move { Ok(first) }).chain(rest)).keep_alive(KeepAlive::default()))
}

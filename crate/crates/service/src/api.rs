//! HTTP/JSON session service.
//!
//! Every response body carries `schema_version`. Mutations on one session
//! are exclusive: a second concurrent post is rejected with 409 instead of
//! queued. Reads are served from a view published after each mutation, so
//! they never wait on a running ingest.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use redzone_core::engine::{
    EngineError, PartitionCounts, Session, SessionConfig, SessionStatus, SuggestionKind,
};
use redzone_core::metrics::{MetricRecord, CURVE_HEADER};
use redzone_core::{GridDomain, KernelParams, Position};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use crate::maps::{GridSpec, MapSpec, SourceSpec};
use crate::store::{LogEntry, SessionMeta, Snapshot, Store, StoreError, StoredSession};
use crate::SCHEMA_VERSION;

/// A label snapshot is written after this many measurements.
pub const SNAPSHOT_EVERY: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub config: SessionConfig,
    /// Lattice for a live session; taken from `ground_truth` when absent.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Enables the metrics endpoint.
    #[serde(default)]
    pub ground_truth: Option<MapSpec>,
    #[serde(default)]
    pub source: Option<SourceSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MeasuredValue {
    Number(f64),
    /// Accepts spellings JSON numbers cannot carry, such as `"NaN"`.
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MeasurementRequest {
    pub index: usize,
    pub value: MeasuredValue,
    /// Reject the post unless the session is still at this step.
    #[serde(default)]
    pub expected_step: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session '{id}'"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code) = match &e {
            EngineError::DuplicateMeasurement(_) => (StatusCode::CONFLICT, "duplicate_measurement"),
            EngineError::OffGridIndex(_) => (StatusCode::UNPROCESSABLE_ENTITY, "off_grid_index"),
            EngineError::ValueNotFinite(_) => (StatusCode::UNPROCESSABLE_ENTITY, "value_not_finite"),
            EngineError::BudgetExhausted(_) | EngineError::Converged | EngineError::Exhausted => {
                (StatusCode::CONFLICT, "session_closed")
            }
            EngineError::InvalidConfig(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "engine_failure"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "schema_version": SCHEMA_VERSION, "error": self });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionView {
    pub step: usize,
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub position_mm: Position,
    pub kind: SuggestionKind,
    pub straddle: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionBody {
    pub schema_version: u32,
    pub session_id: String,
    pub status: SessionStatus,
    pub step: usize,
    /// `null` once the session has converged or is exhausted.
    pub suggestion: Option<SuggestionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridView {
    pub cols: usize,
    pub rows: usize,
    pub origin_mm: Position,
    pub spacing_mm: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBody {
    pub schema_version: u32,
    pub session_id: String,
    pub status: SessionStatus,
    pub step: usize,
    pub strategy: String,
    pub theta: f64,
    pub epsilon: f64,
    pub grid: GridView,
    pub counts: PartitionCounts,
    /// Row-major `U` (above threshold), `L` (below) or `C` (undetermined).
    pub labels: String,
    /// Posterior mean and sd per grid point; `null` before the first fit.
    pub mean: Option<Vec<f64>>,
    pub sd: Option<Vec<f64>>,
    pub kernel_params: Option<KernelParams>,
    pub transfer_shift: Option<(f64, f64)>,
    pub measurements: Vec<LogEntry>,
    pub has_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBody {
    pub schema_version: u32,
    pub session_id: String,
    pub step: usize,
    pub counts: PartitionCounts,
    pub status: SessionStatus,
    pub converged: bool,
    pub deviation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    pub schema_version: u32,
    pub session_id: String,
    pub columns: Vec<String>,
    pub records: Vec<MetricRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedBody {
    pub schema_version: u32,
    pub session_id: String,
    pub status: SessionStatus,
    pub step: usize,
    pub counts: PartitionCounts,
    pub suggestion: Option<SuggestionView>,
}

/// Read-only projection published after every mutation.
#[derive(Debug)]
struct View {
    suggestion: SuggestionBody,
    state: StateBody,
}

struct Engine {
    session: Session,
    log: Vec<LogEntry>,
    metrics: Vec<MetricRecord>,
}

struct Handle {
    id: String,
    meta: SessionMeta,
    truth: Option<Vec<bool>>,
    engine: Arc<Mutex<Engine>>,
    view: RwLock<Arc<View>>,
    metrics: RwLock<Arc<Vec<MetricRecord>>>,
}

impl Handle {
    fn view(&self) -> Arc<View> {
        self.view.read().expect("view lock").clone()
    }

    fn publish(&self, engine: &Engine) {
        *self.view.write().expect("view lock") = Arc::new(project(&self.id, engine, self.truth.is_some()));
        *self.metrics.write().expect("metrics lock") = Arc::new(engine.metrics.clone());
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    sessions: RwLock<HashMap<String, Arc<Handle>>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn suggestion_view(session: &Session) -> Option<SuggestionView> {
    session.suggestion().map(|s| {
        let (row, col) = session.domain().row_col(s.index);
        SuggestionView {
            step: s.step,
            index: s.index,
            row,
            col,
            position_mm: s.position,
            kind: s.kind,
            straddle: s.straddle,
            mean: s.mean,
            sd: s.sd,
        }
    })
}

fn grid_view(d: &GridDomain) -> GridView {
    GridView {
        cols: d.cols(),
        rows: d.rows(),
        origin_mm: d.origin(),
        spacing_mm: d.spacing(),
    }
}

pub fn label_string(session: &Session) -> String {
    session.partition().labels().iter().map(|l| l.as_char()).collect()
}

fn project(id: &str, engine: &Engine, has_truth: bool) -> View {
    let s = &engine.session;
    let cfg = s.config();
    let predictions = s.predictions();
    View {
        suggestion: SuggestionBody {
            schema_version: SCHEMA_VERSION,
            session_id: id.to_string(),
            status: s.status(),
            step: s.step(),
            suggestion: suggestion_view(s),
        },
        state: StateBody {
            schema_version: SCHEMA_VERSION,
            session_id: id.to_string(),
            status: s.status(),
            step: s.step(),
            strategy: cfg.strategy.as_str().to_string(),
            theta: cfg.theta,
            epsilon: cfg.epsilon,
            grid: grid_view(s.domain()),
            counts: s.partition().counts(),
            labels: label_string(s),
            mean: predictions.map(|p| p.iter().map(|p| p.mean).collect()),
            sd: predictions.map(|p| p.iter().map(|p| p.sd()).collect()),
            kernel_params: s.params().copied(),
            transfer_shift: s.transfer_shift(),
            measurements: engine.log.clone(),
            has_ground_truth: has_truth,
        },
    }
}

fn metric_record(session: &Session, truth: &[bool]) -> MetricRecord {
    MetricRecord::evaluate(
        session.step(),
        session.measurements().len(),
        session.partition(),
        &session.means(),
        truth,
    )
}

/// Build the engine a creation request describes, with no measurements.
pub fn instantiate(
    req: &CreateSessionRequest,
) -> Result<(Session, Option<Vec<bool>>), ApiError> {
    let invalid = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", m);
    let truth_map = match &req.ground_truth {
        Some(m) => Some(m.load().map_err(|e| invalid(e.to_string()))?),
        None => None,
    };
    let domain = match (&req.grid, &truth_map) {
        (Some(g), Some(m)) => {
            let d = g.domain().map_err(|e| invalid(e.to_string()))?;
            if &d != m.domain() {
                return Err(invalid("grid does not match the ground-truth lattice".into()));
            }
            d
        }
        (Some(g), None) => g.domain().map_err(|e| invalid(e.to_string()))?,
        (None, Some(m)) => m.domain().clone(),
        (None, None) => return Err(invalid("either grid or ground_truth is required".into())),
    };
    let source = match (&req.source, req.config.strategy.uses_transfer()) {
        (Some(s), true) => Some(s.build().map_err(|e| invalid(e.to_string()))?),
        (None, true) => {
            return Err(invalid(format!(
                "strategy {} needs a source map",
                req.config.strategy
            )))
        }
        (_, false) => None,
    };
    let session = Session::new(req.config.clone(), domain, source)?;
    let truth = truth_map.map(|m| m.truth(req.config.theta));
    Ok((session, truth))
}

/// Replay a stored log; the partition must agree with the stored snapshot
/// at the snapshot's step.
fn restore(stored: &StoredSession) -> Result<(Engine, Option<Vec<bool>>), String> {
    let (mut session, truth) = instantiate(&stored.meta.request).map_err(|e| e.message)?;
    let mut metrics = Vec::new();
    let check = |session: &Session| -> Result<(), String> {
        match &stored.snapshot {
            Some(snap) if snap.step == session.step() && snap.labels != label_string(session) => {
                Err(format!("replayed partition differs from the snapshot at step {}", snap.step))
            }
            _ => Ok(()),
        }
    };
    if let Some(t) = &truth {
        metrics.push(metric_record(&session, t));
    }
    check(&session)?;
    for e in &stored.log {
        session
            .ingest(e.index, e.value)
            .map_err(|err| format!("log entry {}: {err}", e.seq))?;
        if let Some(t) = &truth {
            metrics.push(metric_record(&session, t));
        }
        check(&session)?;
    }
    Ok((
        Engine {
            session,
            log: stored.log.clone(),
            metrics,
        },
        truth,
    ))
}

impl AppState {
    pub fn new(store: Store) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                sessions: RwLock::new(HashMap::new()),
            }),
        }
    }

    /// Open a data directory and replay every stored session. Sessions
    /// that fail to replay are reported and skipped.
    pub fn open(store: Store) -> Result<(Self, Vec<String>), StoreError> {
        let state = Self::new(store);
        let mut problems = Vec::new();
        for stored in state.inner.store.load_all()? {
            match restore(&stored) {
                Ok((engine, truth)) => state.insert(stored.meta, truth, engine),
                Err(e) => problems.push(format!("session {}: {e}", stored.meta.id)),
            }
        }
        Ok((state, problems))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn insert(&self, meta: SessionMeta, truth: Option<Vec<bool>>, engine: Engine) {
        let id = meta.id.clone();
        let handle = Handle {
            view: RwLock::new(Arc::new(project(&id, &engine, truth.is_some()))),
            metrics: RwLock::new(Arc::new(engine.metrics.clone())),
            id: id.clone(),
            meta,
            truth,
            engine: Arc::new(Mutex::new(engine)),
        };
        self.inner
            .sessions
            .write()
            .expect("sessions lock")
            .insert(id, Arc::new(handle));
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown(id))
    }

    pub fn create(&self, req: CreateSessionRequest) -> Result<CreatedBody, ApiError> {
        let (session, truth) = instantiate(&req)?;
        let id = format!("s-{}", uuid::Uuid::new_v4().simple());
        let meta = SessionMeta {
            schema_version: SCHEMA_VERSION,
            id: id.clone(),
            created_ms: now_ms(),
            request: req,
        };
        let metrics = truth.iter().map(|t| metric_record(&session, t)).collect();
        let engine = Engine {
            session,
            log: Vec::new(),
            metrics,
        };
        self.inner.store.create(&meta)?;
        self.inner
            .store
            .write_snapshot(&id, &snapshot_of(&engine.session))?;
        let body = CreatedBody {
            schema_version: SCHEMA_VERSION,
            session_id: id.clone(),
            status: engine.session.status(),
            step: engine.session.step(),
            counts: engine.session.partition().counts(),
            suggestion: suggestion_view(&engine.session),
        };
        self.insert(meta, truth, engine);
        Ok(body)
    }

    pub fn suggestion(&self, id: &str) -> Result<SuggestionBody, ApiError> {
        Ok(self.handle(id)?.view().suggestion.clone())
    }

    pub fn state(&self, id: &str) -> Result<StateBody, ApiError> {
        Ok(self.handle(id)?.view().state.clone())
    }

    pub fn metrics(&self, id: &str) -> Result<MetricsBody, ApiError> {
        let h = self.handle(id)?;
        if h.truth.is_none() {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "no_ground_truth",
                format!("session '{id}' was created without ground truth"),
            ));
        }
        let records = h.metrics.read().expect("metrics lock").clone();
        Ok(MetricsBody {
            schema_version: SCHEMA_VERSION,
            session_id: id.to_string(),
            columns: CURVE_HEADER.split(',').map(str::to_string).collect(),
            records: records.as_ref().clone(),
        })
    }

    /// Ingest one measurement. Fails with 409 if another mutation on the
    /// same session is in progress.
    pub async fn post_measurement(
        &self,
        id: &str,
        req: MeasurementRequest,
    ) -> Result<MeasurementBody, ApiError> {
        let handle = self.handle(id)?;
        let guard = handle.engine.clone().try_lock_owned().map_err(|_| {
            ApiError::new(
                StatusCode::CONFLICT,
                "conflicting_concurrent_post",
                "another measurement for this session is being processed",
            )
        })?;
        let store = self.inner.store.clone();
        tokio::task::spawn_blocking(move || {
            let mut engine = guard;
            ingest_locked(&store, &handle, &mut engine, req)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
    }
}

fn snapshot_of(session: &Session) -> Snapshot {
    Snapshot {
        schema_version: SCHEMA_VERSION,
        step: session.step(),
        status: session.status(),
        labels: label_string(session),
    }
}

fn parse_value(v: MeasuredValue) -> Result<f64, ApiError> {
    match v {
        MeasuredValue::Number(x) => Ok(x),
        MeasuredValue::Text(s) => s.trim().parse::<f64>().map_err(|_| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_value",
                format!("'{s}' is not a number"),
            )
        }),
    }
}

fn ingest_locked(
    store: &Store,
    handle: &Handle,
    engine: &mut Engine,
    req: MeasurementRequest,
) -> Result<MeasurementBody, ApiError> {
    let value = parse_value(req.value)?;
    if let Some(expected) = req.expected_step {
        if expected != engine.session.step() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "stale_step",
                format!(
                    "expected step {expected} but the session is at step {}",
                    engine.session.step()
                ),
            ));
        }
    }
    let outcome = engine.session.ingest(req.index, value)?;
    let entry = LogEntry {
        seq: engine.log.len(),
        index: req.index,
        value,
        deviation: outcome.deviation,
        timestamp_ms: now_ms(),
    };
    if let Err(e) = store.append(&handle.id, &entry) {
        // the log is the source of truth: roll the engine back to it
        let stored = StoredSession {
            meta: handle.meta.clone(),
            log: engine.log.clone(),
            snapshot: None,
        };
        if let Ok((restored, _)) = restore(&stored) {
            *engine = restored;
        }
        return Err(e.into());
    }
    engine.log.push(entry);
    if let Some(t) = &handle.truth {
        let r = metric_record(&engine.session, t);
        engine.metrics.push(r);
    }
    if engine.session.step().is_multiple_of(SNAPSHOT_EVERY) || outcome.status != SessionStatus::Active {
        store.write_snapshot(&handle.id, &snapshot_of(&engine.session))?;
    }
    handle.publish(engine);
    Ok(MeasurementBody {
        schema_version: SCHEMA_VERSION,
        session_id: handle.id.clone(),
        step: outcome.step,
        counts: outcome.counts,
        status: outcome.status,
        converged: outcome.status == SessionStatus::Converged,
        deviation: outcome.deviation,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let status = if e.is_data() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::BAD_REQUEST
        };
        ApiError::new(status, "invalid_body", e.to_string())
    })
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSessionRequest = parse_json(&body)?;
    let created = tokio::task::spawn_blocking(move || app.create(req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn list_sessions(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "schema_version": SCHEMA_VERSION, "sessions": app.session_ids() }))
}

async fn get_suggestion(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SuggestionBody>, ApiError> {
    app.suggestion(&id).map(Json)
}

async fn get_state(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StateBody>, ApiError> {
    app.state(&id).map(Json)
}

async fn get_metrics(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<MetricsBody>, ApiError> {
    app.metrics(&id).map(Json)
}

async fn post_measurement(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<MeasurementBody>, ApiError> {
    // unknown sessions report 404 before any body complaint
    app.handle(&id)?;
    let req: MeasurementRequest = parse_json(&body)?;
    app.post_measurement(&id, req).await.map(Json)
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/suggestion", get(get_suggestion))
        .route("/sessions/{id}/measurements", post(post_measurement))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .fallback(fallback)
        .with_state(state)
}

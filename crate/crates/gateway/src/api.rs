//! HTTP routes and event streams.
//!
//! Every JSON body carries `"version": 1` and matches a file under
//! `schemas/`. Errors are `{"code": ..., "message": ...}`.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use smartline_core::assistant::RemoteConfig;
use smartline_core::assistant::{ask, AssistantBackend, LiveState};
use smartline_core::energy::{flow_aggregate, plant_total_kwh};
use smartline_core::isoforest::AnomalyAlert;
use smartline_core::scenario::{baseline_from_readings, simulate_scenario, Baseline, Coefficients, ScenarioParams};
use smartline_core::{Error, MachineId, Metric, SensorReading};
use tokio::sync::{broadcast, watch};

use crate::pipeline::{Pipeline, StreamEvent, STREAM_BUFFER};

pub const API_VERSION: u32 = 1;
pub const DEFAULT_READINGS_SPAN: u64 = 60;
pub const MAX_READINGS_SPAN: u64 = 100_000;
pub const DEFAULT_WINDOW_SECONDS: u64 = 3600;
pub const MAX_FORECAST_HORIZON: usize = 168;
/// Ticks of recent readings behind a scenario baseline.
pub const BASELINE_TICKS: usize = 60;

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub coefficients: Arc<Coefficients>,
    pub remote: Arc<RemoteConfig>,
    pub machines: Arc<Vec<MachineInfo>>,
    pub shutdown: watch::Receiver<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MachineInfo {
    pub id: MachineId,
    pub slug: String,
    pub process: String,
    pub metrics: Vec<Metric>,
}

pub fn slug(machine: MachineId) -> String {
    machine.name().to_ascii_lowercase().replace(' ', "-")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/machines", get(machines))
        .route("/machines/{id}/readings", get(readings))
        .route("/alerts", get(alerts))
        .route("/maintenance/insights", get(insights))
        .route("/energy/forecast", get(energy_forecast))
        .route("/energy/flows", get(energy_flows))
        .route("/scenario/simulate", post(scenario))
        .route("/assistant/query", post(assistant))
        .route("/stream/readings", get(stream_readings))
        .route("/stream/alerts", get(stream_alerts))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
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

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::UnknownMachine(_) => (StatusCode::NOT_FOUND, "unknown_machine"),
            Error::Validation(_) | Error::Ordering { .. } | Error::Config(_) => (StatusCode::BAD_REQUEST, "validation"),
            Error::SchemaMismatch(_) | Error::Parse { .. } | Error::Version { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "schema_mismatch")
            }
            Error::InsufficientData(_) => (StatusCode::CONFLICT, "insufficient_data"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// `Query` with rejections mapped to `{code, message}`.
pub struct Params<T>(pub T);

impl<T, S> FromRequestParts<S> for Params<T>
where
    Query<T>: FromRequestParts<S, Rejection = QueryRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut axum::http::request::Parts, state: &S) -> Result<Self, ApiError> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Params(v))
            .map_err(|e| ApiError::validation(e.body_text()))
    }
}

/// `Json` with malformed bodies as 400 and well-formed but mistyped bodies as 422.
pub struct Body<T>(pub T);

impl<T, S> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(JsonRejection::JsonDataError(e)) => Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "schema_mismatch",
                e.body_text(),
            )),
            Err(e) => Err(ApiError::validation(e.body_text())),
        }
    }
}

fn resolve_machine(state: &AppState, id: &str) -> Result<MachineId, ApiError> {
    state
        .machines
        .iter()
        .find(|m| m.id.name() == id || m.slug == id.to_ascii_lowercase())
        .map(|m| m.id)
        .ok_or_else(|| Error::UnknownMachine(id.to_string()).into())
}

#[derive(Serialize)]
struct MachinesResponse<'a> {
    version: u32,
    machines: &'a [MachineInfo],
}

async fn machines(State(state): State<AppState>) -> Response {
    Json(MachinesResponse {
        version: API_VERSION,
        machines: &state.machines,
    })
    .into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReadingsQuery {
    from: Option<u64>,
    to: Option<u64>,
}

#[derive(Serialize)]
struct ReadingsResponse {
    version: u32,
    machine: MachineId,
    from: u64,
    to: u64,
    readings: Vec<SensorReading>,
}

async fn readings(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Params(q): Params<ReadingsQuery>,
) -> ApiResult<ReadingsResponse> {
    let machine = resolve_machine(&state, &id)?;
    let store = state.pipeline.store();
    let latest = store.latest(machine).map_or(0, |r| r.tick);
    let to = q.to.unwrap_or(latest);
    let from = q.from.unwrap_or_else(|| to.saturating_sub(DEFAULT_READINGS_SPAN - 1));
    if from > to {
        return Err(ApiError::validation(format!("from {from} is after to {to}")));
    }
    if to - from >= MAX_READINGS_SPAN {
        return Err(ApiError::validation(format!(
            "window longer than {MAX_READINGS_SPAN} ticks"
        )));
    }
    Ok(Json(ReadingsResponse {
        version: API_VERSION,
        machine,
        from,
        to,
        readings: store.query_window(machine, from, to)?,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowQuery {
    window: Option<u64>,
}

impl WindowQuery {
    fn seconds(&self) -> Result<u64, ApiError> {
        match self.window.unwrap_or(DEFAULT_WINDOW_SECONDS) {
            0 => Err(ApiError::validation("window must be at least 1 second")),
            s => Ok(s),
        }
    }
}

#[derive(Serialize)]
struct AlertsResponse {
    version: u32,
    window_seconds: u64,
    alerts: Vec<AnomalyAlert>,
}

fn live_state<'a>(
    pipeline: &'a Pipeline,
    models: &'a crate::models::Models,
    snapshot: &'a crate::pipeline::Snapshot,
    alerts: &'a [AnomalyAlert],
) -> LiveState<'a> {
    LiveState {
        store: pipeline.store(),
        alerts,
        risk_model: models.risk.as_ref(),
        energy_models: &models.energy,
        insights: &snapshot.insights,
    }
}

async fn alerts(State(state): State<AppState>, Params(q): Params<WindowQuery>) -> ApiResult<AlertsResponse> {
    let window_seconds = q.seconds()?;
    let snapshot = state.pipeline.snapshot();
    let models = state.pipeline.models();
    let all: Vec<AnomalyAlert> = snapshot.alerts.iter().cloned().collect();
    let alerts = live_state(&state.pipeline, &models, &snapshot, &all).alerts_within(window_seconds)?;
    Ok(Json(AlertsResponse {
        version: API_VERSION,
        window_seconds,
        alerts,
    }))
}

async fn insights(State(state): State<AppState>) -> Json<Value> {
    let snapshot = state.pipeline.snapshot();
    Json(json!({
        "version": API_VERSION,
        "tick": snapshot.insights_tick,
        "risks": snapshot.risks,
        "insights": snapshot.insights,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ForecastQuery {
    horizon: Option<usize>,
    machine: Option<String>,
}

async fn energy_forecast(State(state): State<AppState>, Params(q): Params<ForecastQuery>) -> ApiResult<Value> {
    let horizon = q.horizon.unwrap_or(state.pipeline.options().schedule.forecast_horizon);
    if !(1..=MAX_FORECAST_HORIZON).contains(&horizon) {
        return Err(ApiError::validation(format!(
            "horizon must be in 1..={MAX_FORECAST_HORIZON}"
        )));
    }
    let machine = q.machine.as_deref().map(|m| resolve_machine(&state, m)).transpose()?;
    let models = state.pipeline.models();
    if !models.energy.iter().any(|(target, _)| *target == machine) {
        let target = machine.map_or("the plant".to_string(), |m| m.to_string());
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "no_model",
            format!("no energy model for {target}"),
        ));
    }
    let snapshot = state.pipeline.snapshot();
    let forecast = live_state(&state.pipeline, &models, &snapshot, &[]).energy_forecast(machine, horizon)?;
    Ok(Json(json!({ "version": API_VERSION, "forecast": forecast })))
}

async fn energy_flows(State(state): State<AppState>, Params(q): Params<WindowQuery>) -> ApiResult<Value> {
    let window_seconds = q.seconds()?;
    let store = state.pipeline.store();
    let Some(latest) = store.latest_tick() else {
        return Err(Error::InsufficientData("no readings yet".into()).into());
    };
    let span = store.time_base().ticks_for_seconds(window_seconds).max(1);
    let from = (latest + 1).saturating_sub(span);
    let mut window = Vec::new();
    for m in state.machines.iter() {
        window.extend(store.query_window(m.id, from, latest)?);
    }
    let processes: BTreeMap<MachineId, String> = state.machines.iter().map(|m| (m.id, m.process.clone())).collect();
    let edges = flow_aggregate(&window, &processes, store.time_base())?;
    Ok(Json(json!({
        "version": API_VERSION,
        "window_seconds": window_seconds,
        "from_tick": from,
        "to_tick": latest,
        "total_kwh": plant_total_kwh(&edges),
        "edges": edges,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioRequest {
    mixing_ratio: f64,
    load_ratio: f64,
    coating_ratio: f64,
    /// Defaults to one derived from the latest readings.
    baseline: Option<Baseline>,
}

async fn scenario(State(state): State<AppState>, Body(req): Body<ScenarioRequest>) -> ApiResult<Value> {
    let params = ScenarioParams {
        mixing_ratio: req.mixing_ratio,
        load_ratio: req.load_ratio,
        coating_ratio: req.coating_ratio,
    };
    let baseline = match req.baseline {
        Some(b) => b,
        None => {
            let store = state.pipeline.store();
            let mut recent = Vec::new();
            for m in state.machines.iter() {
                recent.extend(store.tail(m.id, BASELINE_TICKS));
            }
            baseline_from_readings(&recent, &state.coefficients)?
        }
    };
    let projection = simulate_scenario(params, baseline, &state.coefficients)?;
    Ok(Json(json!({
        "version": API_VERSION,
        "baseline": baseline,
        "projection": projection,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    q: String,
}

async fn assistant(State(state): State<AppState>, Body(req): Body<QueryRequest>) -> ApiResult<Value> {
    if req.q.len() > 1000 {
        return Err(ApiError::validation("question longer than 1000 bytes"));
    }
    let pipeline = state.pipeline.clone();
    let remote = state.remote.clone();
    // The remote client blocks; keep it off the async workers.
    let answer = tokio::task::spawn_blocking(move || {
        let snapshot = pipeline.snapshot();
        let models = pipeline.models();
        let alerts: Vec<AnomalyAlert> = snapshot.alerts.iter().cloned().collect();
        ask(&req.q, &live_state(&pipeline, &models, &snapshot, &alerts), &remote)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let mut body = serde_json::to_value(&answer).map_err(|e| Error::Validation(e.to_string()))?;
    body["version"] = json!(API_VERSION);
    Ok(Json(body))
}

/// Forward a broadcast channel as named events. A subscriber that falls
/// more than the channel capacity behind gets one `overflow` event and is
/// disconnected. The stream also ends on shutdown.
fn event_stream<T: Serialize + Send + Sync + 'static>(
    name: &'static str,
    rx: broadcast::Receiver<Arc<StreamEvent<T>>>,
    shutdown: watch::Receiver<bool>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold((rx, shutdown, false), move |(mut rx, mut shutdown, done)| async move {
        if done || *shutdown.borrow() {
            return None;
        }
        // The channel rounds its capacity up to a power of two; enforce the
        // documented bound here.
        let next = if rx.len() > STREAM_BUFFER {
            Err(broadcast::error::RecvError::Lagged((rx.len() - STREAM_BUFFER) as u64))
        } else {
            tokio::select! {
                r = rx.recv() => r,
                _ = shutdown.changed() => return None,
            }
        };
        let event = match next {
            Ok(ev) => {
                let data = serde_json::to_string(&*ev).unwrap_or_else(|_| "null".into());
                Event::default().event(name).id(ev.sequence.to_string()).data(data)
            }
            Err(broadcast::error::RecvError::Lagged(missed)) => {
                let data = json!({
                    "code": "overflow",
                    "message": format!("subscriber fell more than {STREAM_BUFFER} events behind ({missed} over) and was disconnected"),
                });
                return Some((
                    Ok(Event::default().event("overflow").data(data.to_string())),
                    (rx, shutdown, true),
                ));
            }
            Err(broadcast::error::RecvError::Closed) => return None,
        };
        Some((Ok(event), (rx, shutdown, false)))
    })
}

async fn stream_readings(State(state): State<AppState>) -> impl IntoResponse {
    let rx = state.pipeline.subscribe_readings();
    Sse::new(event_stream("reading", rx, state.shutdown.clone())).keep_alive(KeepAlive::default())
}

async fn stream_alerts(State(state): State<AppState>) -> impl IntoResponse {
    let rx = state.pipeline.subscribe_alerts();
    Sse::new(event_stream("alert", rx, state.shutdown.clone())).keep_alive(KeepAlive::default())
}

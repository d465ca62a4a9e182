//! Operator assistant: a rule-based parser and dispatcher over live plant
//! state, with an optional remote completion service in front.

mod parse;
mod remote;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::energy::{forecast, machine_samples, plant_samples, EnergyForecast, EnergyModel};
use crate::error::Result;
use crate::isoforest::AnomalyAlert;
use crate::maintenance::{assess_risk, extract_features, MachineRisk, MaintenanceInsight, RiskModel};
use crate::store::Store;
use crate::types::{MachineId, Metric, SensorReading};

pub use parse::{
    find_machine, find_metric, find_window_seconds, parse_intent, parse_intent_with, Intent, IntentKind, Rejection,
    Slots, DEFAULT_ANOMALY_WINDOW_S, DEFAULT_FORECAST_HORIZON, MAX_NAME_DISTANCE,
};
pub use remote::{remote_complete, RemoteConfig, DEFAULT_MAX_TOKENS, DEFAULT_TIMEOUT_MS, ENDPOINT_ENV, KEY_ENV};

/// Alerts listed individually before the answer switches to a count.
const MAX_LISTED_ALERTS: usize = 5;

pub const HELP_TEXT: &str = "I can answer one of these at a time: which machines are most likely to fail; \
the current power load of a machine; anomalies in a recent window (e.g. the last hour); the latest value of a \
metric on a machine; an energy forecast; the maintenance schedule.";

/// Read access the dispatcher needs. Each method backs exactly one intent.
pub trait AssistantBackend {
    fn failure_risks(&self) -> Result<Vec<MachineRisk>>;
    fn latest_reading(&self, machine: MachineId) -> Result<Option<SensorReading>>;
    fn alerts_within(&self, window_seconds: u64) -> Result<Vec<AnomalyAlert>>;
    fn energy_forecast(&self, machine: Option<MachineId>, horizon: usize) -> Result<Option<EnergyForecast>>;
    fn maintenance_insights(&self) -> Result<Vec<MaintenanceInsight>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    Rule,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantAnswer {
    pub text: String,
    /// Structured values behind `text`; null only for remote answers.
    pub data: serde_json::Value,
    pub latency_ms: f64,
    pub source: AnswerSource,
    pub intent: Intent,
}

fn metric_label(metric: Metric) -> &'static str {
    match metric {
        Metric::Temperature => "temperature",
        Metric::Pressure => "pressure",
        Metric::VibrationLevel => "vibration level",
        Metric::MachineLoad => "machine load",
        Metric::PowerLoad => "power load",
        Metric::GridUsage => "grid usage",
        Metric::BatteryCapacity => "battery capacity",
        Metric::AgvLoad => "AGV load",
        Metric::MixingSpeed => "mixing speed",
        Metric::CoatingThickness => "coating thickness",
    }
}

fn with_unit(value: f64, metric: Metric) -> String {
    match metric.unit() {
        "" => format!("{value:.2}"),
        unit => format!("{value:.1} {unit}"),
    }
}

/// "the last hour", "the last 30 minutes", "the last 2 days".
pub fn describe_window(seconds: u64) -> String {
    let (n, unit) = if seconds.is_multiple_of(86_400) {
        (seconds / 86_400, "day")
    } else if seconds.is_multiple_of(3600) {
        (seconds / 3600, "hour")
    } else if seconds.is_multiple_of(60) {
        (seconds / 60, "minute")
    } else {
        (seconds, "second")
    };
    if n == 1 {
        format!("the last {unit}")
    } else {
        format!("the last {n} {unit}s")
    }
}

fn rejection_text(rejection: Option<Rejection>) -> String {
    match rejection {
        Some(Rejection::MultiPart) => format!("Please ask one question at a time. {HELP_TEXT}"),
        Some(Rejection::MissingMachine) => {
            let names: Vec<&str> = MachineId::ALL.iter().map(|m| m.name()).collect();
            format!("Which machine do you mean? Known machines: {}.", names.join(", "))
        }
        _ => HELP_TEXT.to_string(),
    }
}

fn answer_risks(backend: &dyn AssistantBackend, machine: Option<MachineId>) -> Result<(String, serde_json::Value)> {
    let mut risks = backend.failure_risks()?;
    if let Some(m) = machine {
        risks.retain(|r| r.machine == m);
    }
    let text = if risks.is_empty() {
        "No failure-risk data is available yet.".to_string()
    } else {
        let listed: Vec<String> = risks.iter().map(|r| format!("{} ({:.2})", r.machine, r.risk)).collect();
        format!("Machines most likely to fail: {}.", listed.join(", "))
    };
    Ok((text, json!({ "risks": risks })))
}

fn answer_metric(
    backend: &dyn AssistantBackend,
    machine: MachineId,
    metric: Metric,
) -> Result<(String, serde_json::Value)> {
    let latest = backend.latest_reading(machine)?;
    let value = latest
        .as_ref()
        .and_then(|r| r.get(metric).map(|v| (r.tick, r.timestamp, v)));
    Ok(match value {
        Some((tick, timestamp, v)) => (
            format!(
                "The current {} of {machine} is {} (tick {tick}).",
                metric_label(metric),
                with_unit(v, metric)
            ),
            json!({ "machine": machine, "metric": metric, "value": v, "tick": tick, "timestamp": timestamp }),
        ),
        None if latest.is_some() => (
            format!("{machine} does not report {}.", metric_label(metric)),
            json!({ "machine": machine, "metric": metric, "value": null }),
        ),
        None => (
            format!("No readings for {machine} yet."),
            json!({ "machine": machine, "metric": metric, "value": null }),
        ),
    })
}

fn answer_alerts(
    backend: &dyn AssistantBackend,
    window_seconds: u64,
    machine: Option<MachineId>,
) -> Result<(String, serde_json::Value)> {
    let mut alerts = backend.alerts_within(window_seconds)?;
    if let Some(m) = machine {
        alerts.retain(|a| a.machine == m);
    }
    let window = describe_window(window_seconds);
    let text = if alerts.is_empty() {
        format!("There were no anomalies detected in {window}.")
    } else {
        let listed: Vec<String> = alerts
            .iter()
            .take(MAX_LISTED_ALERTS)
            .map(|a| {
                format!(
                    "{} at tick {} ({}, score {:.2})",
                    a.machine,
                    a.tick,
                    a.top_feature(),
                    a.score
                )
            })
            .collect();
        let more = alerts.len().saturating_sub(MAX_LISTED_ALERTS);
        let suffix = if more > 0 {
            format!(" and {more} more")
        } else {
            String::new()
        };
        let noun = if alerts.len() == 1 { "anomaly" } else { "anomalies" };
        format!(
            "{} {noun} detected in {window}: {}{suffix}.",
            alerts.len(),
            listed.join("; ")
        )
    };
    Ok((text, json!({ "window_seconds": window_seconds, "alerts": alerts })))
}

fn answer_forecast(
    backend: &dyn AssistantBackend,
    machine: Option<MachineId>,
    horizon: usize,
) -> Result<(String, serde_json::Value)> {
    let target = machine.map_or("the plant".to_string(), |m| m.to_string());
    let Some(f) = backend.energy_forecast(machine, horizon)? else {
        return Ok((
            format!("No energy forecast is available for {target}."),
            json!({ "forecast": null }),
        ));
    };
    let n = f.steps.len() as f64;
    let mean = f.steps.iter().map(|s| s.predicted_kw).sum::<f64>() / n;
    let top = f
        .steps
        .iter()
        .max_by(|a, b| a.predicted_kw.total_cmp(&b.predicted_kw))
        .expect("forecast has at least one step");
    let peaks = f.steps.iter().filter(|s| s.peak).count();
    let text = format!(
        "Power load forecast for {target} over the next {} steps: mean {mean:.1} kW, highest {:.1} kW at tick {}, {peaks} peak step(s).",
        f.horizon_steps, top.predicted_kw, top.tick
    );
    Ok((text, json!({ "forecast": f, "mean_kw": mean })))
}

fn answer_schedule(backend: &dyn AssistantBackend, machine: Option<MachineId>) -> Result<(String, serde_json::Value)> {
    let mut insights = backend.maintenance_insights()?;
    if let Some(m) = machine {
        insights.retain(|i| i.machine == m);
    }
    let text = if insights.is_empty() {
        "No maintenance tasks are currently scheduled.".to_string()
    } else {
        let listed: Vec<String> = insights
            .iter()
            .map(|i| {
                format!(
                    "{} on {} ({}, {}, {})",
                    i.task,
                    i.machine,
                    i.priority,
                    i.reason,
                    i.scheduled_date.format("%Y-%m-%d %H:%M:%S")
                )
            })
            .collect();
        format!("Scheduled maintenance: {}.", listed.join("; "))
    };
    Ok((text, json!({ "insights": insights })))
}

/// Answer a parsed intent from live state through fixed templates.
pub fn dispatch(intent: &Intent, backend: &dyn AssistantBackend) -> Result<AssistantAnswer> {
    let started = Instant::now();
    let s = &intent.slots;
    let (text, data) = match intent.kind {
        IntentKind::FailureRiskRanking => answer_risks(backend, s.machine)?,
        IntentKind::PowerQuery => answer_metric(backend, s.machine.expect("parser fills machine"), Metric::PowerLoad)?,
        IntentKind::MetricQuery => answer_metric(
            backend,
            s.machine.expect("parser fills machine"),
            s.metric.expect("parser fills metric"),
        )?,
        IntentKind::AnomalyWindowQuery => {
            answer_alerts(backend, s.window_seconds.unwrap_or(DEFAULT_ANOMALY_WINDOW_S), s.machine)?
        }
        IntentKind::EnergyForecastQuery => {
            answer_forecast(backend, s.machine, s.horizon.unwrap_or(DEFAULT_FORECAST_HORIZON))?
        }
        IntentKind::MaintenanceScheduleQuery => answer_schedule(backend, s.machine)?,
        IntentKind::Unknown => (
            rejection_text(intent.rejection),
            json!({ "supported": [
                "failure_risk_ranking", "power_query", "anomaly_window_query",
                "metric_query", "energy_forecast_query", "maintenance_schedule_query"
            ] }),
        ),
    };
    Ok(AssistantAnswer {
        text,
        data,
        latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        source: AnswerSource::Rule,
        intent: intent.clone(),
    })
}

/// Full question path: the remote service when configured, otherwise (or on
/// any remote failure) the rule path.
pub fn ask(utterance: &str, backend: &dyn AssistantBackend, remote: &RemoteConfig) -> Result<AssistantAnswer> {
    let started = Instant::now();
    let intent = parse_intent(utterance);
    if remote.is_active() {
        match remote_complete(utterance, remote) {
            Ok(text) => {
                return Ok(AssistantAnswer {
                    text,
                    data: serde_json::Value::Null,
                    latency_ms: started.elapsed().as_secs_f64() * 1000.0,
                    source: AnswerSource::Remote,
                    intent,
                })
            }
            Err(e) => tracing::warn!(error = %e, "remote assistant failed, answering from rules"),
        }
    }
    let mut answer = dispatch(&intent, backend)?;
    answer.latency_ms = started.elapsed().as_secs_f64() * 1000.0;
    Ok(answer)
}

/// Backend over a store snapshot plus whatever models and outputs exist.
pub struct LiveState<'a> {
    pub store: &'a Store,
    pub alerts: &'a [AnomalyAlert],
    pub risk_model: Option<&'a RiskModel>,
    /// Forecast models keyed by target; `None` is the plant total.
    pub energy_models: &'a [(Option<MachineId>, EnergyModel)],
    pub insights: &'a [MaintenanceInsight],
}

impl AssistantBackend for LiveState<'_> {
    fn failure_risks(&self) -> Result<Vec<MachineRisk>> {
        let Some(model) = self.risk_model else {
            return Ok(Vec::new());
        };
        let windows: Vec<_> = self
            .store
            .registry()
            .machines()
            .iter()
            .filter_map(|m| extract_features(&self.store.tail(*m, model.window), model.window).ok())
            .collect();
        assess_risk(model, &windows)
    }

    fn latest_reading(&self, machine: MachineId) -> Result<Option<SensorReading>> {
        Ok(self.store.latest(machine))
    }

    fn alerts_within(&self, window_seconds: u64) -> Result<Vec<AnomalyAlert>> {
        let Some(latest) = self.store.latest_tick() else {
            return Ok(Vec::new());
        };
        let span = self.store.time_base().ticks_for_seconds(window_seconds);
        let from = (latest + 1).saturating_sub(span);
        Ok(self.alerts.iter().filter(|a| a.tick >= from).cloned().collect())
    }

    fn energy_forecast(&self, machine: Option<MachineId>, horizon: usize) -> Result<Option<EnergyForecast>> {
        let Some((_, model)) = self.energy_models.iter().find(|(target, _)| *target == machine) else {
            return Ok(None);
        };
        let history = match machine {
            Some(m) => machine_samples(&self.store.tail(m, model.lags), m)?,
            None => {
                let mut readings = Vec::new();
                for m in self.store.registry().machines() {
                    readings.extend(self.store.tail(*m, model.lags));
                }
                let mut samples = plant_samples(&readings)?;
                // Only ticks every machine has reported are complete.
                let n = self.store.registry().machines().len();
                samples.retain(|s| readings.iter().filter(|r| r.tick == s.tick).count() == n);
                samples
            }
        };
        if history.len() < model.lags {
            return Ok(None);
        }
        forecast(model, &history, horizon, machine).map(Some)
    }

    fn maintenance_insights(&self) -> Result<Vec<MaintenanceInsight>> {
        Ok(self.insights.to_vec())
    }
}

//! Ingest → detect → assess → forecast, one tick at a time.
//!
//! A single writer calls [`Pipeline::process_tick`]. Handlers read the
//! published [`Snapshot`] and the current [`Models`], both swapped whole.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::Serialize;
use smartline_core::assistant::LiveState;
use smartline_core::energy::{anomaly_features, ANOMALY_FEATURES};
use smartline_core::energy::{hour_of_day, EnergyFeatureRow, EnergyForecast, DEFAULT_LAGS};
use smartline_core::isoforest::{
    AlertCategory, AnomalyAlert, FeatureMode, IsoParams, Observation, StreamConfig, StreamingDetector,
};
use smartline_core::maintenance::{
    assess_risk, extract_features, generate_insights, Catalog, MachineRisk, MaintenanceInsight,
};
use smartline_core::plantsim::Simulator;
use smartline_core::store::EventKind;
use smartline_core::{Error, MachineId, Metric, Result, SensorReading, Store};
use tokio::sync::broadcast;

use crate::config::Schedule;
use crate::models::Models;

/// Events a subscriber may fall behind by before it is dropped.
pub const STREAM_BUFFER: usize = 1000;
/// Most recent alerts kept for queries.
pub const ALERT_RETENTION: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct StreamEvent<T> {
    pub sequence: u64,
    #[serde(flatten)]
    pub data: T,
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub seed: u64,
    pub contamination: f64,
    pub energy_contamination: f64,
    pub schedule: Schedule,
    pub catalog: Catalog,
    /// Keep Low-priority rows in the insight table.
    pub include_low: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            contamination: 0.01,
            energy_contamination: 0.005,
            schedule: Schedule::default(),
            catalog: smartline_core::maintenance::default_catalog(),
            include_low: false,
        }
    }
}

/// Results of the scheduled jobs, as of `tick`.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub tick: Option<u64>,
    pub alerts: VecDeque<AnomalyAlert>,
    pub risks: Vec<MachineRisk>,
    pub insights: Vec<MaintenanceInsight>,
    pub insights_tick: Option<u64>,
    pub forecast: Option<EnergyForecast>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InsightRecord<'a> {
    pub tick: u64,
    pub risks: &'a [MachineRisk],
    pub insights: &'a [MaintenanceInsight],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

struct Engine {
    machine: StreamingDetector,
    energy: StreamingDetector,
    /// Recent PowerLoad per machine, newest first.
    power: BTreeMap<MachineId, VecDeque<f64>>,
    ticks: u64,
}

pub struct Pipeline {
    store: Arc<Store>,
    options: PipelineOptions,
    models: RwLock<Arc<Models>>,
    snapshot: RwLock<Arc<Snapshot>>,
    engine: Mutex<Engine>,
    readings_tx: broadcast::Sender<Arc<StreamEvent<SensorReading>>>,
    alerts_tx: broadcast::Sender<Arc<StreamEvent<AnomalyAlert>>>,
    latencies: Mutex<Vec<f64>>,
}

fn detector(seed: u64, contamination: f64, mode: FeatureMode, category: AlertCategory) -> Result<StreamingDetector> {
    StreamingDetector::new(StreamConfig {
        params: IsoParams {
            contamination,
            ..IsoParams::default()
        },
        seed,
        mode,
        category,
        ..StreamConfig::default()
    })
}

fn datetime(timestamp_ms: i64) -> Result<DateTime<Utc>> {
    DateTime::from_timestamp_millis(timestamp_ms)
        .ok_or_else(|| Error::Validation(format!("timestamp {timestamp_ms} out of range")))
}

impl Pipeline {
    pub fn new(store: Arc<Store>, models: Models, options: PipelineOptions) -> Result<Self> {
        let engine = Engine {
            machine: detector(
                options.seed,
                options.contamination,
                FeatureMode::PerFeature,
                AlertCategory::Machine,
            )?,
            energy: detector(
                options.seed.wrapping_add(1),
                options.energy_contamination,
                FeatureMode::Joint,
                AlertCategory::Energy,
            )?,
            power: BTreeMap::new(),
            ticks: 0,
        };
        let (readings_tx, _) = broadcast::channel(STREAM_BUFFER);
        let (alerts_tx, _) = broadcast::channel(STREAM_BUFFER);
        Ok(Self {
            store,
            options,
            models: RwLock::new(Arc::new(models)),
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            engine: Mutex::new(engine),
            readings_tx,
            alerts_tx,
            latencies: Mutex::new(Vec::new()),
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    pub fn models(&self) -> Arc<Models> {
        self.models.read().expect("models lock poisoned").clone()
    }

    pub fn swap_models(&self, models: Models) {
        *self.models.write().expect("models lock poisoned") = Arc::new(models);
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    fn publish(&self, update: impl FnOnce(&mut Snapshot)) {
        let mut guard = self.snapshot.write().expect("snapshot lock poisoned");
        update(Arc::make_mut(&mut guard));
    }

    pub fn subscribe_readings(&self) -> broadcast::Receiver<Arc<StreamEvent<SensorReading>>> {
        self.readings_tx.subscribe()
    }

    pub fn subscribe_alerts(&self) -> broadcast::Receiver<Arc<StreamEvent<AnomalyAlert>>> {
        self.alerts_tx.subscribe()
    }

    /// Ingest→alert latencies in milliseconds, one per alert.
    pub fn latencies(&self) -> Vec<f64> {
        self.latencies.lock().expect("latency lock poisoned").clone()
    }

    pub fn latency_summary(&self) -> Option<LatencySummary> {
        let mut v = self.latencies();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
        Some(LatencySummary {
            count: v.len(),
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p95_ms: v[rank - 1],
            max_ms: v[v.len() - 1],
        })
    }

    /// Process every reading of one tick, then run whatever jobs are due.
    pub fn process_tick(&self, readings: Vec<SensorReading>) -> Result<Vec<AnomalyAlert>> {
        let mut engine = self.engine.lock().expect("engine lock poisoned");
        engine.ticks += 1;
        let detect = engine.ticks.is_multiple_of(self.options.schedule.detect_every);
        let mut raised = Vec::new();
        let mut last_tick = None;
        for reading in readings {
            let started = Instant::now();
            let sequence = self.store.ingest_reading(reading.clone())?;
            last_tick = Some(last_tick.map_or(reading.tick, |t: u64| t.max(reading.tick)));
            let _ = self.readings_tx.send(Arc::new(StreamEvent {
                sequence,
                data: reading.clone(),
            }));

            let mut alerts = Vec::new();
            if detect {
                alerts.extend(engine.machine.observe_reading(&reading)?);
            }
            if let Some(obs) = energy_observation(&mut engine.power, &reading) {
                if detect {
                    let names: Vec<String> = ANOMALY_FEATURES.map(String::from).to_vec();
                    alerts.extend(engine.energy.observe(obs, &names)?);
                }
            }
            for alert in alerts {
                let sequence = self.store.append_event(EventKind::Alert, &alert)?;
                let _ = self.alerts_tx.send(Arc::new(StreamEvent {
                    sequence,
                    data: alert.clone(),
                }));
                self.latencies
                    .lock()
                    .expect("latency lock poisoned")
                    .push(started.elapsed().as_secs_f64() * 1000.0);
                raised.push(alert);
            }
        }
        let ticks = engine.ticks;
        drop(engine);

        if !raised.is_empty() || last_tick.is_some() {
            let new_alerts = raised.clone();
            self.publish(|s| {
                s.tick = last_tick.or(s.tick);
                s.alerts.extend(new_alerts);
                while s.alerts.len() > ALERT_RETENTION {
                    s.alerts.pop_front();
                }
            });
        }
        let Some(tick) = last_tick else {
            return Ok(raised);
        };
        let schedule = self.options.schedule;
        if ticks.is_multiple_of(schedule.assess_every) {
            if let Err(e) = self.assess(tick) {
                tracing::warn!(tick, error = %e, "risk assessment skipped");
            }
        }
        if ticks.is_multiple_of(schedule.forecast_every) {
            if let Err(e) = self.forecast(tick) {
                tracing::warn!(tick, error = %e, "forecast skipped");
            }
        }
        Ok(raised)
    }

    /// Score every machine with enough history, regenerate the insight
    /// table and log it. Dates derive from the tick's timestamp.
    pub fn assess(&self, tick: u64) -> Result<()> {
        let models = self.models();
        let Some(model) = models.risk.as_ref() else {
            return Ok(());
        };
        let windows: Vec<_> = self
            .store
            .registry()
            .machines()
            .iter()
            .filter_map(|m| extract_features(&self.store.tail(*m, model.window), model.window).ok())
            .collect();
        if windows.is_empty() {
            return Ok(());
        }
        let risks = assess_risk(model, &windows)?;
        let now = datetime(self.store.time_base().timestamp(tick))?;
        let insights = generate_insights(&risks, &self.options.catalog, now, self.options.include_low);
        self.store.append_event(
            EventKind::Insight,
            &InsightRecord {
                tick,
                risks: &risks,
                insights: &insights,
            },
        )?;
        self.publish(|s| {
            s.risks = risks;
            s.insights = insights;
            s.insights_tick = Some(tick);
        });
        Ok(())
    }

    pub fn forecast(&self, tick: u64) -> Result<()> {
        let models = self.models();
        let snapshot = self.snapshot();
        let alerts: Vec<AnomalyAlert> = snapshot.alerts.iter().cloned().collect();
        let live = LiveState {
            store: &self.store,
            alerts: &alerts,
            risk_model: models.risk.as_ref(),
            energy_models: &models.energy,
            insights: &snapshot.insights,
        };
        use smartline_core::assistant::AssistantBackend;
        let Some(forecast) = live.energy_forecast(None, self.options.schedule.forecast_horizon)? else {
            return Ok(());
        };
        debug_assert!(forecast.generated_at <= tick);
        self.store.append_event(EventKind::Forecast, &forecast)?;
        self.publish(|s| s.forecast = Some(forecast));
        Ok(())
    }

    /// Drop readings the store already holds, so a restart over an existing
    /// log resumes mid-tick without duplicates.
    fn unseen(&self, mut readings: Vec<SensorReading>) -> Vec<SensorReading> {
        readings.retain(|r| self.store.latest(r.machine).is_none_or(|last| r.tick > last.tick));
        readings
    }

    /// Feed simulator ticks until it runs out or `stop` is set. Readings the
    /// store already holds (after a restart) are skipped.
    pub fn drive(&self, sim: &mut Simulator, pace: Duration, stop: &AtomicBool) -> Result<u64> {
        let mut fed = 0;
        while !stop.load(Ordering::SeqCst) {
            let Ok(readings) = sim.step() else {
                break;
            };
            let readings = self.unseen(readings);
            if readings.is_empty() {
                continue;
            }
            if let Err(e) = self.process_tick(readings) {
                tracing::warn!(tick = sim.tick() - 1, error = %e, "tick rejected");
            }
            fed += 1;
            if !pace.is_zero() {
                std::thread::sleep(pace);
            }
        }
        self.store.flush()?;
        Ok(fed)
    }

    /// Feed pre-grouped ticks (CSV replay), same contract as [`Pipeline::drive`].
    pub fn drive_batches(
        &self,
        batches: impl IntoIterator<Item = Vec<SensorReading>>,
        pace: Duration,
        stop: &AtomicBool,
    ) -> Result<u64> {
        let mut fed = 0;
        for readings in batches {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let readings = self.unseen(readings);
            if readings.is_empty() {
                continue;
            }
            if let Err(e) = self.process_tick(readings) {
                tracing::warn!(error = %e, "tick rejected");
            }
            fed += 1;
            if !pace.is_zero() {
                std::thread::sleep(pace);
            }
        }
        self.store.flush()?;
        Ok(fed)
    }
}

/// Energy anomaly features once `DEFAULT_LAGS` earlier PowerLoad values exist.
fn energy_observation(power: &mut BTreeMap<MachineId, VecDeque<f64>>, reading: &SensorReading) -> Option<Observation> {
    let value = reading.get(Metric::PowerLoad)?;
    let lags = power.entry(reading.machine).or_default();
    let obs = (lags.len() == DEFAULT_LAGS).then(|| {
        let row = EnergyFeatureRow {
            tick: reading.tick,
            timestamp: reading.timestamp,
            lags: lags.iter().copied().collect(),
            machine_load: reading.get(Metric::MachineLoad).unwrap_or(0.0),
            grid_usage: reading.get(Metric::GridUsage).unwrap_or(0.0),
            battery_capacity: reading.get(Metric::BatteryCapacity).unwrap_or(0.0),
            hour: hour_of_day(reading.timestamp),
            target: value,
        };
        Observation {
            machine: reading.machine,
            tick: reading.tick,
            timestamp: reading.timestamp,
            values: anomaly_features(&row),
        }
    });
    lags.push_front(value);
    lags.truncate(DEFAULT_LAGS);
    obs
}

/// Group tick-major readings into per-tick batches.
pub fn batches_by_tick(readings: Vec<SensorReading>) -> Vec<Vec<SensorReading>> {
    let mut by_tick: BTreeMap<u64, Vec<SensorReading>> = BTreeMap::new();
    for r in readings {
        by_tick.entry(r.tick).or_default().push(r);
    }
    by_tick.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use smartline_core::StoreOptions;

    fn reading(tick: u64, power: f64) -> SensorReading {
        SensorReading::new(MachineId::Agv, tick, tick as i64 * 1000).with(Metric::PowerLoad, power)
    }

    #[test]
    fn energy_features_wait_for_full_lag_window() {
        let mut power = BTreeMap::new();
        for t in 0..DEFAULT_LAGS as u64 {
            assert!(energy_observation(&mut power, &reading(t, 1.0)).is_none());
        }
        let obs = energy_observation(&mut power, &reading(24, 3.0)).unwrap();
        assert_eq!(obs.values, vec![2.0, 2.0]);
        assert_eq!(power[&MachineId::Agv].len(), DEFAULT_LAGS);
        assert_eq!(power[&MachineId::Agv][0], 3.0);
    }

    #[test]
    fn latency_percentile_is_nearest_rank() {
        let store = Arc::new(Store::in_memory(StoreOptions::default()));
        let p = Pipeline::new(store, Models::default(), PipelineOptions::default()).unwrap();
        p.latencies.lock().unwrap().extend((1..=100).map(f64::from));
        let s = p.latency_summary().unwrap();
        assert_eq!(s.p95_ms, 95.0);
        assert_eq!(s.mean_ms, 50.5);
        assert_eq!(s.max_ms, 100.0);
    }

    #[test]
    fn batches_group_by_tick() {
        let batches = batches_by_tick(vec![reading(1, 1.0), reading(0, 1.0), reading(1, 2.0)]);
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[1].len(), 2);
    }

    #[test]
    fn bad_reading_is_rejected_without_poisoning() {
        let store = Arc::new(Store::in_memory(StoreOptions::default()));
        let p = Pipeline::new(store.clone(), Models::default(), PipelineOptions::default()).unwrap();
        p.process_tick(vec![reading(5, 1.0)]).unwrap();
        assert!(p.process_tick(vec![reading(5, 1.0)]).is_err());
        p.process_tick(vec![reading(6, 1.0)]).unwrap();
        assert_eq!(store.len(MachineId::Agv), 2);
    }
}

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, IsoParams, IsolationModel};
use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::types::{MachineId, SensorReading};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warn,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertCategory {
    Machine,
    Energy,
}

/// One feature vector to score, tagged with where and when it was measured.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub machine: MachineId,
    pub tick: u64,
    pub timestamp: i64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDeviation {
    pub feature: String,
    pub value: f64,
    /// `(value - training mean) / training std`; 0 when the std is 0.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyAlert {
    pub machine: MachineId,
    pub tick: u64,
    pub timestamp: i64,
    pub category: AlertCategory,
    pub score: f64,
    pub threshold: f64,
    pub severity: Severity,
    /// Sorted by descending `|z|`; the first entry is the main culprit.
    pub deviations: Vec<FeatureDeviation>,
}

impl AnomalyAlert {
    pub fn top_feature(&self) -> &str {
        &self.deviations[0].feature
    }
}

/// Split `[threshold, 1)` into equal thirds: info, warn, critical.
pub fn severity_for(score: f64, threshold: f64) -> Severity {
    let band = (1.0 - threshold) / 3.0;
    if score < threshold + band {
        Severity::Info
    } else if score < threshold + 2.0 * band {
        Severity::Warn
    } else {
        Severity::Critical
    }
}

fn deviations(model: &IsolationModel, values: &[f64]) -> Vec<FeatureDeviation> {
    let mut out: Vec<FeatureDeviation> = model
        .feature_names
        .iter()
        .zip(values)
        .zip(model.feature_means.iter().zip(&model.feature_stds))
        .map(|((name, &value), (&mean, &std))| FeatureDeviation {
            feature: name.clone(),
            value,
            z: if std > 0.0 { (value - mean) / std } else { 0.0 },
        })
        .collect();
    out.sort_by(|a, b| b.z.abs().total_cmp(&a.z.abs()));
    out
}

fn alert_for(model: &IsolationModel, obs: &Observation, category: AlertCategory) -> Result<Option<AnomalyAlert>> {
    let score = model.score(&obs.values)?;
    if !model.is_anomaly(score) {
        return Ok(None);
    }
    Ok(Some(AnomalyAlert {
        machine: obs.machine,
        tick: obs.tick,
        timestamp: obs.timestamp,
        category,
        score,
        threshold: model.score_threshold,
        severity: severity_for(score, model.score_threshold),
        deviations: deviations(model, &obs.values),
    }))
}

/// Score a batch against a fixed model; one alert per flagged observation.
pub fn detect_stream(
    model: &IsolationModel,
    window: &[Observation],
    category: AlertCategory,
) -> Result<Vec<AnomalyAlert>> {
    let mut alerts = Vec::new();
    for obs in window {
        if obs.values.len() != model.n_features() {
            return Err(Error::validation(format!(
                "{} tick {}: {} values for a {}-feature model",
                obs.machine,
                obs.tick,
                obs.values.len(),
                model.n_features()
            )));
        }
        alerts.extend(alert_for(model, obs, category)?);
    }
    Ok(alerts)
}

/// How a machine's metrics are fed to isolation forests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// One forest over the whole feature vector.
    Joint,
    /// One univariate forest per feature over `|x - mean| / std` of the
    /// training window, each calibrated to `q / d` so the machine-level flag
    /// rate stays near `q`. Folding both tails onto one side keeps a far
    /// outlier from scoring below the threshold set by the opposite tail.
    PerFeature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub params: IsoParams,
    pub seed: u64,
    /// Trailing readings kept per machine for (re)training.
    pub window: usize,
    /// Ticks between refits once a model exists.
    pub refit_every: u64,
    /// Readings required before the first fit; nothing is scored before it.
    pub warmup: usize,
    pub mode: FeatureMode,
    pub category: AlertCategory,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            params: IsoParams::default(),
            seed: 42,
            window: 5000,
            refit_every: 1000,
            warmup: 1000,
            mode: FeatureMode::PerFeature,
            category: AlertCategory::Machine,
        }
    }
}

#[derive(Debug)]
struct MachineState {
    feature_names: Vec<String>,
    buffer: VecDeque<Vec<f64>>,
    /// Empty until warmup completes. Joint mode holds one model.
    models: Vec<Arc<IsolationModel>>,
    means: Vec<f64>,
    stds: Vec<f64>,
    last_fit_tick: u64,
    fits: u64,
}

impl MachineState {
    fn abs_z(&self, f: usize, value: f64) -> f64 {
        let std = self.stds[f];
        if std > 0.0 {
            ((value - self.means[f]) / std).abs()
        } else {
            0.0
        }
    }

    fn score(&self, obs: &Observation, category: AlertCategory) -> Result<Option<AnomalyAlert>> {
        // (score, threshold, normalized margin) of the strongest flag
        let mut worst: Option<(f64, f64, f64)> = None;
        let mut consider = |model: &IsolationModel, row: &[f64]| -> Result<()> {
            let score = model.score(row)?;
            let thr = model.score_threshold;
            if score >= thr {
                let margin = (score - thr) / (1.0 - thr).max(f64::EPSILON);
                if worst.is_none_or(|(_, _, m)| margin > m) {
                    worst = Some((score, thr, margin));
                }
            }
            Ok(())
        };
        if self.models.len() == 1 && self.feature_names.len() != 1 {
            consider(&self.models[0], &obs.values)?;
        } else {
            for (f, model) in self.models.iter().enumerate() {
                consider(model, &[self.abs_z(f, obs.values[f])])?;
            }
        }
        let Some((score, threshold, _)) = worst else {
            return Ok(None);
        };
        let mut deviations: Vec<FeatureDeviation> = self
            .feature_names
            .iter()
            .zip(&obs.values)
            .zip(self.means.iter().zip(&self.stds))
            .map(|((name, &value), (&mean, &std))| FeatureDeviation {
                feature: name.clone(),
                value,
                z: if std > 0.0 { (value - mean) / std } else { 0.0 },
            })
            .collect();
        deviations.sort_by(|a, b| b.z.abs().total_cmp(&a.z.abs()));
        Ok(Some(AnomalyAlert {
            machine: obs.machine,
            tick: obs.tick,
            timestamp: obs.timestamp,
            category,
            score,
            threshold,
            severity: severity_for(score, threshold),
            deviations,
        }))
    }

    fn refit(&mut self, config: &StreamConfig, machine: MachineId) -> Result<()> {
        let rows: Vec<Vec<f64>> = self.buffer.iter().cloned().collect();
        let seed = (config.seed ^ fnv1a64(machine.name())).wrapping_add(self.fits * 1_000_003);
        let d = self.feature_names.len();
        let n = rows.len() as f64;
        self.means = (0..d).map(|f| rows.iter().map(|r| r[f]).sum::<f64>() / n).collect();
        self.stds = (0..d)
            .map(|f| {
                let m = self.means[f];
                (rows.iter().map(|r| (r[f] - m).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect();
        self.models = match config.mode {
            FeatureMode::Joint => vec![Arc::new(fit(&rows, self.feature_names.clone(), config.params, seed)?)],
            FeatureMode::PerFeature => {
                let params = IsoParams {
                    contamination: config.params.contamination / d as f64,
                    ..config.params
                };
                (0..d)
                    .into_par_iter()
                    .map(|f| {
                        let column: Vec<Vec<f64>> = rows.iter().map(|r| vec![self.abs_z(f, r[f])]).collect();
                        let name = vec![self.feature_names[f].clone()];
                        fit(&column, name, params, seed.wrapping_add(f as u64 * 7919)).map(Arc::new)
                    })
                    .collect::<Result<_>>()?
            }
        };
        self.fits += 1;
        Ok(())
    }
}

/// Per-machine online detector. Each observation is scored against the
/// machine's current models, then joins the training window.
/// Models are refitted every `refit_every` ticks.
#[derive(Debug)]
pub struct StreamingDetector {
    config: StreamConfig,
    machines: BTreeMap<MachineId, MachineState>,
}

impl StreamingDetector {
    pub fn new(config: StreamConfig) -> Result<Self> {
        if config.window < 2 || config.warmup < 2 || config.warmup > config.window {
            return Err(Error::validation("need 2 <= warmup <= window"));
        }
        if config.refit_every == 0 {
            return Err(Error::validation("refit_every must be at least 1"));
        }
        Ok(Self {
            config,
            machines: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    /// Active models for `machine`; empty while it is still warming up.
    pub fn models(&self, machine: MachineId) -> Vec<Arc<IsolationModel>> {
        self.machines
            .get(&machine)
            .map(|s| s.models.clone())
            .unwrap_or_default()
    }

    pub fn observe_reading(&mut self, reading: &SensorReading) -> Result<Option<AnomalyAlert>> {
        let known = self.machines.get(&reading.machine).is_some_and(|s| {
            s.feature_names.len() == reading.values.len()
                && s.feature_names
                    .iter()
                    .zip(reading.values.keys())
                    .all(|(a, m)| a == m.name())
        });
        let names: Vec<String> = if known {
            self.machines[&reading.machine].feature_names.clone()
        } else {
            reading.values.keys().map(|m| m.name().to_string()).collect()
        };
        let obs = Observation {
            machine: reading.machine,
            tick: reading.tick,
            timestamp: reading.timestamp,
            values: reading.values.values().copied().collect(),
        };
        self.observe(obs, &names)
    }

    pub fn observe(&mut self, obs: Observation, feature_names: &[String]) -> Result<Option<AnomalyAlert>> {
        let config = self.config;
        let state = self.machines.entry(obs.machine).or_insert_with(|| MachineState {
            feature_names: feature_names.to_vec(),
            buffer: VecDeque::with_capacity(config.window),
            models: Vec::new(),
            means: Vec::new(),
            stds: Vec::new(),
            last_fit_tick: 0,
            fits: 0,
        });
        if state.feature_names != feature_names || obs.values.len() != feature_names.len() {
            return Err(Error::validation(format!(
                "{} tick {}: feature schema changed",
                obs.machine, obs.tick
            )));
        }
        if obs.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "{} tick {}: non-finite value",
                obs.machine, obs.tick
            )));
        }

        let alert = if state.models.is_empty() {
            None
        } else {
            state.score(&obs, config.category)?
        };

        if state.buffer.len() == config.window {
            state.buffer.pop_front();
        }
        state.buffer.push_back(obs.values);

        let due = if state.models.is_empty() {
            state.buffer.len() >= config.warmup
        } else {
            obs.tick.saturating_sub(state.last_fit_tick) >= config.refit_every
        };
        if due {
            state.refit(&config, obs.machine)?;
            state.last_fit_tick = obs.tick;
        }
        Ok(alert)
    }
}

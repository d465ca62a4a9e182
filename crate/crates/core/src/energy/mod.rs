//! Energy forecasting, consumption anomalies and flow aggregation.

mod anomaly;
mod flows;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{self, Dataset, ForestKind, ForestModel, Hyperparams};
use crate::plantsim::SimConfig;
use crate::types::{MachineId, Metric, SensorReading, TimeBase};

pub use anomaly::{
    anomaly_features, detect_energy_anomalies, energy_observations, fit_energy_detector, ANOMALY_FEATURES,
};
pub use flows::{check_conservation, flow_aggregate, plant_total_kwh, FlowEdge, FlowNode};

pub const DEFAULT_LAGS: usize = 24;
pub const ENERGY_MODEL_FORMAT: &str = "smartline-energy";
pub const ENERGY_MODEL_VERSION: u32 = 1;
/// Truth values below this are left out of MAPE.
pub const MAPE_FLOOR_KW: f64 = 0.1;
/// Fraction of training targets a step must exceed to count as a peak.
pub const PEAK_QUANTILE: f64 = 0.9;

const HOUR_MS: i64 = 3_600_000;

/// One tick of the energy-relevant metrics, for a machine or the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub tick: u64,
    pub timestamp: i64,
    pub power_load: f64,
    pub machine_load: f64,
    pub grid_usage: f64,
    pub battery_capacity: f64,
}

impl EnergySample {
    /// Absent auxiliary metrics read as 0; PowerLoad is required.
    pub fn from_reading(r: &SensorReading) -> Result<Self> {
        let power_load = r
            .get(Metric::PowerLoad)
            .ok_or_else(|| Error::validation(format!("{} tick {}: no PowerLoad", r.machine, r.tick)))?;
        Ok(Self {
            tick: r.tick,
            timestamp: r.timestamp,
            power_load,
            machine_load: r.get(Metric::MachineLoad).unwrap_or(0.0),
            grid_usage: r.get(Metric::GridUsage).unwrap_or(0.0),
            battery_capacity: r.get(Metric::BatteryCapacity).unwrap_or(0.0),
        })
    }
}

/// Plant-level series: PowerLoad and GridUsage summed per tick, MachineLoad
/// and BatteryCapacity averaged over the machines reporting that tick.
pub fn plant_samples(readings: &[SensorReading]) -> Result<Vec<EnergySample>> {
    let mut by_tick: BTreeMap<u64, (EnergySample, usize)> = BTreeMap::new();
    for r in readings {
        let s = EnergySample::from_reading(r)?;
        let entry = by_tick.entry(r.tick).or_insert((
            EnergySample {
                power_load: 0.0,
                machine_load: 0.0,
                grid_usage: 0.0,
                battery_capacity: 0.0,
                ..s
            },
            0,
        ));
        entry.0.power_load += s.power_load;
        entry.0.grid_usage += s.grid_usage;
        entry.0.machine_load += s.machine_load;
        entry.0.battery_capacity += s.battery_capacity;
        entry.1 += 1;
    }
    Ok(by_tick
        .into_values()
        .map(|(mut s, n)| {
            s.machine_load /= n as f64;
            s.battery_capacity /= n as f64;
            s
        })
        .collect())
}

/// Samples of one machine, in tick order.
pub fn machine_samples(readings: &[SensorReading], machine: MachineId) -> Result<Vec<EnergySample>> {
    readings
        .iter()
        .filter(|r| r.machine == machine)
        .map(EnergySample::from_reading)
        .collect()
}

pub fn hour_of_day(timestamp_ms: i64) -> u8 {
    timestamp_ms.div_euclid(HOUR_MS).rem_euclid(24) as u8
}

/// Features for predicting PowerLoad at `tick`. Everything except the
/// calendar hour comes from earlier ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyFeatureRow {
    pub tick: u64,
    pub timestamp: i64,
    /// PowerLoad at `tick - 1`, `tick - 2`, ...
    pub lags: Vec<f64>,
    /// MachineLoad, GridUsage and BatteryCapacity at `tick - 1`.
    pub machine_load: f64,
    pub grid_usage: f64,
    pub battery_capacity: f64,
    pub hour: u8,
    pub target: f64,
}

impl EnergyFeatureRow {
    pub fn vector(&self) -> Vec<f64> {
        let mut v = self.lags.clone();
        v.extend([
            self.machine_load,
            f64::from(self.hour),
            self.grid_usage,
            self.battery_capacity,
        ]);
        v
    }
}

pub fn feature_names(lags: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=lags).map(|l| format!("PowerLoad_lag{l}")).collect();
    names.extend(["MachineLoad", "HourOfDay", "GridUsage", "BatteryCapacity"].map(String::from));
    names
}

fn check_contiguous(samples: &[EnergySample]) -> Result<()> {
    for pair in samples.windows(2) {
        if pair[1].tick != pair[0].tick + 1 {
            return Err(Error::validation(format!(
                "energy series jumps from tick {} to {}",
                pair[0].tick, pair[1].tick
            )));
        }
    }
    Ok(())
}

/// One row per sample that has `lags` predecessors.
pub fn build_features_from(samples: &[EnergySample], lags: usize) -> Result<Vec<EnergyFeatureRow>> {
    if lags == 0 {
        return Err(Error::validation("need at least one lag"));
    }
    if samples.len() <= lags {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {}",
            samples.len(),
            lags + 1
        )));
    }
    check_contiguous(samples)?;
    Ok((lags..samples.len())
        .map(|t| {
            let prev = &samples[t - 1];
            EnergyFeatureRow {
                tick: samples[t].tick,
                timestamp: samples[t].timestamp,
                lags: (1..=lags).map(|l| samples[t - l].power_load).collect(),
                machine_load: prev.machine_load,
                grid_usage: prev.grid_usage,
                battery_capacity: prev.battery_capacity,
                hour: hour_of_day(samples[t].timestamp),
                target: samples[t].power_load,
            }
        })
        .collect())
}

/// [`build_features_from`] over one machine's readings.
pub fn build_features(readings: &[SensorReading], lags: usize) -> Result<Vec<EnergyFeatureRow>> {
    if let Some(first) = readings.first() {
        if let Some(other) = readings.iter().find(|r| r.machine != first.machine) {
            return Err(Error::validation(format!(
                "mixed machines: {} and {}",
                first.machine, other.machine
            )));
        }
    }
    let samples: Vec<EnergySample> = readings.iter().map(EnergySample::from_reading).collect::<Result<_>>()?;
    build_features_from(&samples, lags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub format: String,
    pub version: u32,
    pub lags: usize,
    pub tick_ms: i64,
    pub train_min: f64,
    pub train_max: f64,
    pub peak_threshold: f64,
    pub forest: ForestModel,
}

pub fn train_energy_model(rows: &[EnergyFeatureRow], hyperparams: Hyperparams, seed: u64) -> Result<EnergyModel> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InsufficientData("no energy feature rows".into()))?;
    let lags = first.lags.len();
    if rows.iter().any(|r| r.lags.len() != lags) {
        return Err(Error::validation("rows disagree on lag count"));
    }
    let tick_ms = rows
        .windows(2)
        .map(|p| (p[1].timestamp - p[0].timestamp) / (p[1].tick - p[0].tick).max(1) as i64)
        .next()
        .unwrap_or(1000);
    let targets: Vec<f64> = rows.iter().map(|r| r.target).collect();
    let data = Dataset::new(
        feature_names(lags),
        rows.iter().map(EnergyFeatureRow::vector).collect(),
        targets.clone(),
    )?;
    let forest = forest::fit(&data, ForestKind::Regressor, hyperparams, seed)?;
    let mut sorted = targets;
    sorted.sort_by(f64::total_cmp);
    Ok(EnergyModel {
        format: ENERGY_MODEL_FORMAT.into(),
        version: ENERGY_MODEL_VERSION,
        lags,
        tick_ms,
        train_min: sorted[0],
        train_max: sorted[sorted.len() - 1],
        peak_threshold: quantile(&sorted, PEAK_QUANTILE),
        forest,
    })
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl EnergyModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::validation(format!("encode model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::artifact::check_header(text, ENERGY_MODEL_FORMAT, ENERGY_MODEL_VERSION)?;
        let model: EnergyModel = serde_json::from_str(text).map_err(Error::from_json)?;
        if model.forest.feature_names != feature_names(model.lags) {
            return Err(Error::SchemaMismatch("forest features do not match lag count".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    pub tick: u64,
    pub timestamp: i64,
    pub predicted_kw: f64,
    pub peak: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyForecast {
    /// `None` for the plant total.
    pub machine: Option<MachineId>,
    pub horizon_steps: usize,
    pub generated_at: u64,
    pub steps: Vec<ForecastStep>,
}

/// Iterated one-step forecast from the end of `history`. Each prediction
/// becomes lag 1 of the next step; auxiliary metrics hold their last values.
pub fn forecast(
    model: &EnergyModel,
    history: &[EnergySample],
    horizon: usize,
    machine: Option<MachineId>,
) -> Result<EnergyForecast> {
    if horizon < 1 {
        return Err(Error::validation("forecast horizon must be at least 1"));
    }
    if history.len() < model.lags {
        return Err(Error::InsufficientData(format!(
            "{} samples of history, need {}",
            history.len(),
            model.lags
        )));
    }
    check_contiguous(&history[history.len() - model.lags..])?;
    let last = history[history.len() - 1];
    let mut lags: Vec<f64> = history.iter().rev().take(model.lags).map(|s| s.power_load).collect();
    let mut steps = Vec::with_capacity(horizon);
    for j in 1..=horizon {
        let timestamp = last.timestamp + j as i64 * model.tick_ms;
        let row = EnergyFeatureRow {
            tick: last.tick + j as u64,
            timestamp,
            lags: lags.clone(),
            machine_load: last.machine_load,
            grid_usage: last.grid_usage,
            battery_capacity: last.battery_capacity,
            hour: hour_of_day(timestamp),
            target: f64::NAN,
        };
        let predicted = model.forest.predict(&row.vector())?;
        steps.push(ForecastStep {
            tick: row.tick,
            timestamp,
            predicted_kw: predicted,
            peak: predicted > model.peak_threshold,
        });
        lags.rotate_right(1);
        lags[0] = predicted;
    }
    Ok(EnergyForecast {
        machine,
        horizon_steps: horizon,
        generated_at: last.tick,
        steps,
    })
}

/// Mean absolute percentage error in percent, skipping truths below
/// [`MAPE_FLOOR_KW`].
pub fn mape(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::validation("truth and prediction lengths differ"));
    }
    let terms: Vec<f64> = truth
        .iter()
        .zip(predicted)
        .filter(|(t, _)| t.abs() >= MAPE_FLOOR_KW)
        .map(|(t, p)| ((t - p) / t).abs())
        .collect();
    if terms.is_empty() {
        return Err(Error::InsufficientData("no truth values above the MAPE floor".into()));
    }
    Ok(100.0 * terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Hourly ticks with a ±20 % daily swing, `days` long.
pub fn diurnal_benchmark(seed: u64, days: u64) -> SimConfig {
    let mut config = SimConfig::new(seed, days * 24);
    config.time_base = TimeBase::new(TimeBase::DEFAULT_EPOCH_MS, HOUR_MS as u64);
    config.diurnal_amplitude = 0.2;
    config
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(values: &[f64]) -> Vec<EnergySample> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| EnergySample {
                tick: i as u64,
                timestamp: i as i64 * HOUR_MS,
                power_load: *v,
                machine_load: 0.5,
                grid_usage: 1.0,
                battery_capacity: 0.8,
            })
            .collect()
    }

    #[test]
    fn lag_indexing() {
        let rows = build_features_from(&samples(&[10.0, 20.0, 30.0]), 2).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].lags, vec![20.0, 10.0]);
        assert_eq!(rows[0].target, 30.0);
        assert_eq!(rows[0].hour, 2);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            build_features_from(&samples(&[1.0, 2.0]), 2),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn gaps_rejected() {
        let mut s = samples(&[1.0, 2.0, 3.0, 4.0]);
        s[3].tick = 9;
        assert!(build_features_from(&s, 2).is_err());
    }

    #[test]
    fn constant_series_forecasts_exactly() {
        let s = samples(&[42.5; 100]);
        let rows = build_features_from(&s, DEFAULT_LAGS).unwrap();
        let model = train_energy_model(&rows, Hyperparams::default(), 1).unwrap();
        let f = forecast(&model, &s, 48, None).unwrap();
        assert!(f.steps.iter().all(|s| s.predicted_kw == 42.5 && !s.peak));
        assert_eq!(f.steps[0].tick, 100);
    }

    #[test]
    fn horizon_zero_rejected() {
        let s = samples(&[1.0; 10]);
        let model = train_energy_model(&build_features_from(&s, 3).unwrap(), Hyperparams::default(), 1).unwrap();
        assert!(matches!(forecast(&model, &s, 0, None), Err(Error::Validation(_))));
    }

    #[test]
    fn mape_skips_tiny_truths() {
        assert_eq!(mape(&[0.0, 10.0], &[5.0, 11.0]).unwrap(), 10.0);
        assert!(mape(&[0.05], &[1.0]).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 10.0], 0.9), 9.0);
        assert_eq!(quantile(&[3.0], 0.9), 3.0);
    }

    #[test]
    fn model_json_round_trip() {
        let s = samples(&(0..40).map(|i| (i % 7) as f64).collect::<Vec<_>>());
        let model = train_energy_model(&build_features_from(&s, 4).unwrap(), Hyperparams::default(), 3).unwrap();
        let back = EnergyModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }
}

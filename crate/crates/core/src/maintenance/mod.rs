//! Predictive maintenance: windowed features, failure-risk classification
//! and the actionable-insights table.

mod insights;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{self, Dataset, ForestKind, ForestModel, Hyperparams};
use crate::plantsim::{DegradationSpec, LabeledDataset, SimConfig};
use crate::rng::SplitMix64;
use crate::types::{MachineId, Metric, SensorReading};

pub use insights::{
    default_catalog, generate_insights, render_table, Catalog, MaintenanceInsight, Priority, ReasonEntry, ReasonRule,
    FALLBACK_TASK,
};

pub const DEFAULT_WINDOW: usize = 60;
pub const DEFAULT_HORIZON: u64 = 20;
/// P(fail) at or above which a window is classified as failing.
pub const DECISION_THRESHOLD: f64 = 0.5;

const STATS: [&str; 3] = ["mean", "std", "slope"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Least-squares slope per tick.
    pub slope: f64,
}

/// Summary statistics of one machine's last `window_len` ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub machine: MachineId,
    pub end_tick: u64,
    pub window_len: usize,
    pub stats: BTreeMap<Metric, MetricStats>,
}

impl FeatureWindow {
    /// `[mean, std, slope]` for each metric in `metrics`, flattened.
    pub fn vector(&self, metrics: &[Metric]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(metrics.len() * 3);
        for m in metrics {
            let s = self
                .stats
                .get(m)
                .ok_or_else(|| Error::validation(format!("{} window has no {m} statistics", self.machine)))?;
            out.extend([s.mean, s.std, s.slope]);
        }
        Ok(out)
    }
}

pub fn feature_names(metrics: &[Metric]) -> Vec<String> {
    metrics
        .iter()
        .flat_map(|m| STATS.iter().map(move |s| format!("{}_{s}", m.name())))
        .collect()
}

/// Inverse of [`feature_names`]: the metric each model column summarizes.
pub fn metrics_of(names: &[String]) -> Result<Vec<Metric>> {
    let mut metrics = Vec::new();
    for chunk in names.chunks(3) {
        let metric = chunk[0]
            .strip_suffix("_mean")
            .ok_or_else(|| Error::SchemaMismatch(format!("unexpected feature {}", chunk[0])))?
            .parse::<Metric>()
            .map_err(|_| Error::SchemaMismatch(format!("unexpected feature {}", chunk[0])))?;
        if chunk.len() != 3 || feature_names(&[metric]) != chunk {
            return Err(Error::SchemaMismatch(format!("malformed feature group for {metric}")));
        }
        metrics.push(metric);
    }
    Ok(metrics)
}

pub fn window_stats(ticks: &[f64], values: &[f64]) -> MetricStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let t_mean = ticks.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (t, v) in ticks.iter().zip(values) {
        sxy += (t - t_mean) * (v - mean);
        sxx += (t - t_mean).powi(2);
    }
    MetricStats {
        mean,
        std: var.sqrt(),
        slope: if sxx > 0.0 { sxy / sxx } else { 0.0 },
    }
}

/// Statistics over readings whose tick lies in `(last_tick - W, last_tick]`.
/// `readings` must belong to one machine and be in tick order.
pub fn extract_features(readings: &[SensorReading], window: usize) -> Result<FeatureWindow> {
    let last = readings
        .last()
        .ok_or_else(|| Error::InsufficientData("no readings".into()))?;
    if window < 2 {
        return Err(Error::validation("window must span at least 2 ticks"));
    }
    let start = last.tick.saturating_sub(window as u64 - 1);
    let first = readings.partition_point(|r| r.tick < start);
    let slice = &readings[first..];
    if slice.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: {} reading(s) in the last {window} ticks, need 2",
            last.machine,
            slice.len()
        )));
    }
    if let Some(r) = slice.iter().find(|r| r.machine != last.machine) {
        return Err(Error::validation(format!(
            "mixed machines in window: {} and {}",
            r.machine, last.machine
        )));
    }
    let ticks: Vec<f64> = slice.iter().map(|r| r.tick as f64).collect();
    let mut stats = BTreeMap::new();
    for metric in last.values.keys() {
        let values: Option<Vec<f64>> = slice.iter().map(|r| r.get(*metric)).collect();
        if let Some(values) = values {
            stats.insert(*metric, window_stats(&ticks, &values));
        }
    }
    Ok(FeatureWindow {
        machine: last.machine,
        end_tick: last.tick,
        window_len: window,
        stats,
    })
}

/// Windowed training rows built from a labelled dataset. Row `i` summarizes
/// the `window` ticks ending at a labelled tick and carries that tick's label.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub metrics: Vec<Metric>,
    pub keys: Vec<(MachineId, u64)>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

pub fn windowed_dataset(ds: &LabeledDataset, window: usize) -> Result<WindowedDataset> {
    if window < 2 {
        return Err(Error::validation("window must span at least 2 ticks"));
    }
    // (tick, features, label) per machine
    type Rows<'a> = Vec<(u64, &'a [f64], u8)>;
    let mut by_machine: BTreeMap<MachineId, Rows> = BTreeMap::new();
    for (row, label) in ds.rows.iter().zip(&ds.labels) {
        by_machine
            .entry(row.machine)
            .or_default()
            .push((row.tick, &row.values, *label));
    }
    let d = ds.feature_names.len();
    let mut out = WindowedDataset {
        metrics: ds.feature_names.clone(),
        keys: Vec::new(),
        rows: Vec::new(),
        labels: Vec::new(),
    };
    let mut ticks = Vec::with_capacity(window);
    let mut column = Vec::with_capacity(window);
    for (machine, series) in by_machine {
        for end in window - 1..series.len() {
            let span = &series[end + 1 - window..=end];
            ticks.clear();
            ticks.extend(span.iter().map(|(t, _, _)| *t as f64));
            let mut row = Vec::with_capacity(d * 3);
            for f in 0..d {
                column.clear();
                column.extend(span.iter().map(|(_, v, _)| v[f]));
                let s = window_stats(&ticks, &column);
                row.extend([s.mean, s.std, s.slope]);
            }
            out.keys.push((machine, series[end].0));
            out.rows.push(row);
            out.labels.push(series[end].2);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// `tp / (tp + fp)`, or 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, or 0 when there were no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Trained classifier plus what is needed to explain its predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub forest: ForestModel,
    pub metrics: Vec<Metric>,
    pub window: usize,
    /// Held-out evaluation.
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    /// Mean and std of each feature over healthy training rows.
    pub healthy_means: Vec<f64>,
    pub healthy_stds: Vec<f64>,
}

/// Seeded shuffle split; returns (train, test) row indices.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::validation(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut idx);
    let n_train = (n as f64 * train_fraction).round() as usize;
    let test = idx.split_off(n_train.min(n));
    Ok((idx, test))
}

pub fn train_risk_model(
    data: &WindowedDataset,
    window: usize,
    train_fraction: f64,
    hyperparams: Hyperparams,
    seed: u64,
) -> Result<RiskModel> {
    let (train, test) = train_test_split(data.rows.len(), train_fraction, seed)?;
    if test.is_empty() {
        return Err(Error::validation("test split is empty"));
    }
    let positives = train.iter().filter(|&&i| data.labels[i] == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Training("training split holds a single class".into()));
    }
    let names = feature_names(&data.metrics);
    let train_set = Dataset::new(
        names,
        train.iter().map(|&i| data.rows[i].clone()).collect(),
        train.iter().map(|&i| data.labels[i] as f64).collect(),
    )?;
    let forest = forest::fit(&train_set, ForestKind::Classifier, hyperparams, seed)?;

    let mut confusion = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for &i in &test {
        let predicted = forest.positive_probability(&data.rows[i])? >= DECISION_THRESHOLD;
        match (predicted, data.labels[i] == 1) {
            (true, true) => confusion.tp += 1,
            (true, false) => confusion.fp += 1,
            (false, false) => confusion.tn += 1,
            (false, true) => confusion.fn_ += 1,
        }
    }

    let healthy: Vec<&Vec<f64>> = train
        .iter()
        .filter(|&&i| data.labels[i] == 0)
        .map(|&i| &data.rows[i])
        .collect();
    let d = data.metrics.len() * 3;
    let n = healthy.len() as f64;
    let healthy_means: Vec<f64> = (0..d).map(|f| healthy.iter().map(|r| r[f]).sum::<f64>() / n).collect();
    let healthy_stds: Vec<f64> = (0..d)
        .map(|f| (healthy.iter().map(|r| (r[f] - healthy_means[f]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();

    Ok(RiskModel {
        forest,
        metrics: data.metrics.clone(),
        window,
        precision: confusion.precision(),
        recall: confusion.recall(),
        confusion,
        healthy_means,
        healthy_stds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineRisk {
    pub machine: MachineId,
    pub risk: f64,
    /// Metric contributing most to the risk: importance times deviation.
    pub top_metric: Metric,
}

impl RiskModel {
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Envelope<'a> {
            format: &'static str,
            version: u32,
            #[serde(flatten)]
            model: &'a RiskModel,
        }
        serde_json::to_string(&Envelope {
            format: RISK_MODEL_FORMAT,
            version: RISK_MODEL_VERSION,
            model: self,
        })
        .map_err(|e| Error::validation(format!("encode model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::artifact::check_header(text, RISK_MODEL_FORMAT, RISK_MODEL_VERSION)?;
        let model: RiskModel = serde_json::from_str(text).map_err(Error::from_json)?;
        if feature_names(&model.metrics) != model.forest.feature_names {
            return Err(Error::SchemaMismatch(
                "risk model metrics disagree with forest features".into(),
            ));
        }
        Ok(model)
    }

    /// Metric with the largest `importance * |z|` in this window, summing over
    /// the metric's mean/std/slope features.
    fn top_metric(&self, vector: &[f64]) -> Metric {
        let mut best = (self.metrics[0], f64::NEG_INFINITY);
        for (k, metric) in self.metrics.iter().enumerate() {
            let mut weight = 0.0;
            for (f, value) in vector.iter().enumerate().skip(3 * k).take(3) {
                let std = self.healthy_stds[f];
                let z = if std > 0.0 {
                    (value - self.healthy_means[f]) / std
                } else {
                    0.0
                };
                weight += self.forest.importances[f] * z.abs();
            }
            if weight > best.1 {
                best = (*metric, weight);
            }
        }
        best.0
    }
}

pub const RISK_MODEL_FORMAT: &str = "smartline-risk";
pub const RISK_MODEL_VERSION: u32 = 1;

/// P(fail) per machine, sorted by descending risk then registry order.
pub fn assess_risk(model: &RiskModel, windows: &[FeatureWindow]) -> Result<Vec<MachineRisk>> {
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        let vector = w.vector(&model.metrics)?;
        out.push(MachineRisk {
            machine: w.machine,
            risk: model.forest.positive_probability(&vector)?,
            top_metric: model.top_metric(&vector),
        });
    }
    out.sort_by(|a, b| b.risk.total_cmp(&a.risk).then(a.machine.cmp(&b.machine)));
    Ok(out)
}

/// Standard degradation benchmark: three drift episodes on the six-machine
/// line, each ending in a threshold crossing well before the run ends.
pub fn degradation_benchmark(seed: u64) -> SimConfig {
    let mut config = SimConfig::new(seed, 3000);
    config.degradations = vec![
        DegradationSpec {
            machine: MachineId::FormationEquipment,
            metric: Metric::PowerLoad,
            start_tick: 700,
            drift_per_tick: 0.375,
        },
        DegradationSpec {
            machine: MachineId::SealingMachine,
            metric: Metric::Temperature,
            start_tick: 1300,
            drift_per_tick: 0.25,
        },
        DegradationSpec {
            machine: MachineId::ElectrolyteFillingMachine,
            metric: Metric::Pressure,
            start_tick: 1900,
            drift_per_tick: 0.375,
        },
    ];
    config
}

/// Windows whose label is exactly `1{VibrationLevel slope > 0.01}`.
///
/// Slopes keep a gap around the boundary so held-out rows cannot fall between
/// a learned threshold and the true one. A random-amplitude alternating
/// component makes the window std uninformative, and random intercepts do the
/// same for the mean; Temperature is pure noise.
pub fn slope_separable_dataset(n: usize, seed: u64) -> Result<(Vec<FeatureWindow>, WindowedDataset)> {
    let mut rng = SplitMix64::new(seed);
    let metrics = vec![Metric::Temperature, Metric::VibrationLevel];
    let mut windows = Vec::with_capacity(n);
    let mut data = WindowedDataset {
        metrics: metrics.clone(),
        keys: Vec::with_capacity(n),
        rows: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    for i in 0..n {
        let slope = if rng.next_f64() < 0.4 {
            0.012 + 0.018 * rng.next_f64()
        } else {
            0.008 * rng.next_f64()
        };
        let intercept = 1.0 + 2.0 * rng.next_f64();
        let wobble = 0.5 * rng.next_f64();
        let machine = MachineId::ALL[i % MachineId::ALL.len()];
        let readings: Vec<SensorReading> = (0..DEFAULT_WINDOW as u64)
            .map(|t| {
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                SensorReading::new(machine, t, 0)
                    .with(Metric::VibrationLevel, intercept + slope * t as f64 + sign * wobble)
                    .with(Metric::Temperature, 40.0 + rng.next_gaussian())
            })
            .collect();
        let window = extract_features(&readings, DEFAULT_WINDOW)?;
        data.keys.push((machine, window.end_tick));
        data.rows.push(window.vector(&metrics)?);
        data.labels.push(u8::from(slope > 0.01));
        windows.push(window);
    }
    Ok((windows, data))
}

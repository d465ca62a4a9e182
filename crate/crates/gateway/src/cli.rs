//! Command-line interface. Every subcommand except `serve` works offline on
//! files and returns its output as a string.

use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::DateTime;
use clap::{Args, Parser, Subcommand, ValueEnum};
use smartline_core::assistant::{ask, LiveState};
use smartline_core::csvio::{read_feature_table, read_sensor_csv, write_sensor_csv};
use smartline_core::energy::{
    build_features_from, diurnal_benchmark, forecast, machine_samples, plant_samples, train_energy_model, DEFAULT_LAGS,
};
use smartline_core::forest::{self, Dataset, ForestKind, Hyperparams};
use smartline_core::isoforest::{
    self, detect_stream, threshold_from_contamination, AlertCategory, AnomalyAlert, IsoParams, Observation,
    StreamConfig, StreamingDetector,
};
use smartline_core::maintenance::{
    assess_risk, default_catalog, degradation_benchmark, extract_features, generate_insights, render_table,
    train_risk_model, windowed_dataset, Catalog, DEFAULT_HORIZON,
};
use smartline_core::plantsim::{generate_labeled_dataset, run, SimConfig};
use smartline_core::{Error, MachineId, Result, SensorReading, Store, StoreOptions, TimeBase};

use crate::api::slug;
use crate::config::ServiceConfig;
use crate::models::{self, TRAIN_FRACTION};
use crate::pipeline::batches_by_tick;

#[derive(Debug, Parser)]
#[command(name = "smartline", version, about = "Battery-line telemetry analytics and service")]
pub struct Cli {
    /// Tick length used to timestamp CSV readings.
    #[arg(long, global = true, default_value_t = 1000)]
    pub tick_ms: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Healthy line.
    Default,
    /// Three drifting machines that cross their failure thresholds.
    Degradation,
    /// Hourly ticks over 40 days with a daily load swing.
    Diurnal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTask {
    /// Random forest classifier on a feature table CSV.
    Classify,
    /// Random forest regressor on a feature table CSV.
    Regress,
    /// Isolation forest over one machine's readings.
    Anomaly,
    /// Failure-risk model on a labeled simulation.
    Risk,
    /// Power-load forecaster on sensor CSV.
    Energy,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config file; overrides --preset, --seed and --ticks.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub ticks: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: TrainTask,
    /// Feature table (classify, regress) or sensor CSV (anomaly, energy).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Simulation config with degradations (risk); defaults to the degradation preset.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    /// Target machine (anomaly, energy). Energy defaults to the plant total.
    #[arg(long)]
    pub machine: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    pub contamination: f64,
    #[arg(long, default_value_t = 100)]
    pub n_estimators: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Isolation model from `train --task anomaly`; needs --machine. Without
    /// it readings stream through per-machine detectors.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub machine: Option<String>,
    /// Streaming: the target flag rate. With --model: recalibrate the
    /// threshold so this fraction of the given data is flagged.
    #[arg(long)]
    pub contamination: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub machine: Option<String>,
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
}

#[derive(Debug, Args)]
pub struct InsightsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Keep Low-priority rows.
    #[arg(long)]
    pub include_low: bool,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    pub question: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub risk_model: Option<PathBuf>,
    #[arg(long)]
    pub energy_model: Option<PathBuf>,
    /// Completion endpoint to try before the built-in rules. The key comes
    /// from SMARTLINE_LLM_KEY.
    #[arg(long)]
    pub remote: Option<String>,
    /// Answer as JSON instead of plain text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub train_on_start: bool,
    /// Wall-clock pause between ticks.
    #[arg(long)]
    pub pace_ms: Option<u64>,
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate sensor CSV.
    Simulate(SimulateArgs),
    /// Train and save a model.
    Train(TrainArgs),
    /// Print anomaly alerts as JSON lines.
    Detect(DetectArgs),
    /// Print an energy forecast as JSON.
    Forecast(ForecastArgs),
    /// Print the maintenance table for the latest readings.
    Insights(InsightsArgs),
    /// Answer one operator question from CSV readings and models.
    Ask(AskArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

impl ServeArgs {
    /// Config file (or defaults) with flag overrides applied.
    pub fn service_config(&self) -> Result<ServiceConfig> {
        let mut config = match &self.config {
            Some(p) => ServiceConfig::from_file(p)?,
            None => ServiceConfig::default(),
        };
        if let Some(listen) = &self.listen {
            config.listen = listen.clone();
        }
        if self.train_on_start {
            config.train_on_start = true;
        }
        if let Some(ms) = self.pace_ms {
            config.tick_ms = ms;
        }
        if let Some(p) = &self.event_log {
            config.event_log = Some(p.clone());
        }
        Ok(config)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn read_readings(path: &Path, tick_ms: u64) -> Result<Vec<SensorReading>> {
    read_sensor_csv(open(path)?, TimeBase::new(TimeBase::DEFAULT_EPOCH_MS, tick_ms))
}

/// Canonical name or its slug, e.g. "Sealing Machine" or "sealing-machine".
fn machine_arg(name: Option<&str>) -> Result<Option<MachineId>> {
    name.map(|n| {
        MachineId::ALL
            .into_iter()
            .find(|m| slug(*m) == n.to_ascii_lowercase())
            .map_or_else(|| n.parse(), Ok)
    })
    .transpose()
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))
}

/// Run a non-serve command.
pub fn run_offline(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a, cli.tick_ms),
        Command::Detect(a) => detect(a, cli.tick_ms),
        Command::Forecast(a) => forecast_cmd(a, cli.tick_ms),
        Command::Insights(a) => insights(a, cli.tick_ms),
        Command::Ask(a) => ask_cmd(a, cli.tick_ms),
        Command::Serve(_) => Err(Error::Config("serve needs the async runtime".into())),
    }
}

fn sim_config(a: &SimulateArgs) -> Result<SimConfig> {
    if let Some(p) = &a.config {
        return SimConfig::from_file(p);
    }
    Ok(match a.preset {
        Preset::Default => SimConfig::new(a.seed, a.ticks),
        Preset::Degradation => degradation_benchmark(a.seed),
        Preset::Diurnal => diurnal_benchmark(a.seed, 40),
    })
}

fn simulate(a: &SimulateArgs) -> Result<String> {
    let readings = run(&sim_config(a)?)?;
    match &a.out {
        Some(path) => {
            write_sensor_csv(File::create(path)?, &readings)?;
            Ok(format!("wrote {} readings to {}\n", readings.len(), path.display()))
        }
        None => {
            let mut buf = Vec::new();
            write_sensor_csv(&mut buf, &readings)?;
            String::from_utf8(buf).map_err(|e| Error::Validation(e.to_string()))
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, task: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("--data is required for --task {task}")))
}

fn train(a: &TrainArgs, tick_ms: u64) -> Result<String> {
    let hp = Hyperparams {
        n_estimators: a.n_estimators,
        ..Hyperparams::default()
    };
    let (json, summary) = match a.task {
        TrainTask::Classify | TrainTask::Regress => {
            let table = read_feature_table(open(require(&a.data, "classify/regress")?)?)?;
            let data = Dataset::new(table.feature_names, table.rows, table.targets)?;
            let kind = if a.task == TrainTask::Classify {
                ForestKind::Classifier
            } else {
                ForestKind::Regressor
            };
            let model = forest::fit(&data, kind, hp, a.seed)?;
            (
                model.to_json()?,
                format!("{} trees on {} rows", a.n_estimators, data.len()),
            )
        }
        TrainTask::Anomaly => {
            let machine = machine_arg(a.machine.as_deref())?
                .ok_or_else(|| Error::Config("--machine is required for --task anomaly".into()))?;
            let readings = read_readings(require(&a.data, "anomaly")?, tick_ms)?;
            let own: Vec<&SensorReading> = readings.iter().filter(|r| r.machine == machine).collect();
            let first = own
                .first()
                .ok_or_else(|| Error::InsufficientData(format!("no readings for {machine}")))?;
            let names: Vec<String> = first.values.keys().map(|m| m.name().to_string()).collect();
            let rows: Vec<Vec<f64>> = own.iter().map(|r| r.values.values().copied().collect()).collect();
            let params = IsoParams {
                contamination: a.contamination,
                ..IsoParams::default()
            };
            let model = isoforest::fit(&rows, names, params, a.seed)?;
            (
                model.to_json()?,
                format!(
                    "{machine}: threshold {:.4} on {} readings",
                    model.score_threshold,
                    rows.len()
                ),
            )
        }
        TrainTask::Risk => {
            let config = match &a.sim {
                Some(p) => SimConfig::from_file(p)?,
                None => degradation_benchmark(a.seed),
            };
            let labeled = generate_labeled_dataset(&config, DEFAULT_HORIZON)?;
            let data = windowed_dataset(&labeled, smartline_core::maintenance::DEFAULT_WINDOW)?;
            let model = train_risk_model(
                &data,
                smartline_core::maintenance::DEFAULT_WINDOW,
                TRAIN_FRACTION,
                hp,
                a.seed,
            )?;
            let summary = format!("precision {:.3} recall {:.3}", model.precision, model.recall);
            (model.to_json()?, summary)
        }
        TrainTask::Energy => {
            let readings = read_readings(require(&a.data, "energy")?, tick_ms)?;
            let samples = match machine_arg(a.machine.as_deref())? {
                Some(m) => machine_samples(&readings, m)?,
                None => plant_samples(&readings)?,
            };
            let rows = build_features_from(&samples, DEFAULT_LAGS)?;
            let model = train_energy_model(&rows, hp, a.seed)?;
            (
                model.to_json()?,
                format!("{} rows, peak threshold {:.2} kW", rows.len(), model.peak_threshold),
            )
        }
    };
    models::save(&a.out, &json)?;
    Ok(format!("{summary}\nwrote {}\n", a.out.display()))
}

fn detect(a: &DetectArgs, tick_ms: u64) -> Result<String> {
    let readings = read_readings(&a.data, tick_ms)?;
    let alerts: Vec<AnomalyAlert> = match &a.model {
        Some(path) => {
            let mut model = isoforest::load_model(path)?;
            let machine = machine_arg(a.machine.as_deref())?
                .ok_or_else(|| Error::Config("--machine is required with --model".into()))?;
            let observations = readings
                .iter()
                .filter(|r| r.machine == machine)
                .map(|r| {
                    let values = model
                        .feature_names
                        .iter()
                        .map(|name| {
                            let metric = name
                                .parse()
                                .map_err(|_| Error::SchemaMismatch(format!("model feature {name} is not a metric")))?;
                            r.get(metric).ok_or_else(|| {
                                Error::SchemaMismatch(format!("{} tick {} has no {name}", r.machine, r.tick))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    Ok(Observation {
                        machine,
                        tick: r.tick,
                        timestamp: r.timestamp,
                        values,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(q) = a.contamination {
                let rows: Vec<Vec<f64>> = observations.iter().map(|o| o.values.clone()).collect();
                model.score_threshold = threshold_from_contamination(&model.score_batch(&rows)?, q)?;
            }
            detect_stream(&model, &observations, AlertCategory::Machine)?
        }
        None => {
            let mut detector = StreamingDetector::new(StreamConfig {
                params: IsoParams {
                    contamination: a.contamination.unwrap_or(0.01),
                    ..IsoParams::default()
                },
                seed: a.seed,
                ..StreamConfig::default()
            })?;
            let only = machine_arg(a.machine.as_deref())?;
            let mut out = Vec::new();
            for r in readings.iter().filter(|r| only.is_none_or(|m| r.machine == m)) {
                out.extend(detector.observe_reading(r)?);
            }
            out
        }
    };
    let mut text = String::new();
    for alert in &alerts {
        text.push_str(&serde_json::to_string(alert).map_err(|e| Error::Validation(e.to_string()))?);
        text.push('\n');
    }
    Ok(text)
}

fn forecast_cmd(a: &ForecastArgs, tick_ms: u64) -> Result<String> {
    let model = models::load_energy(&a.model)?;
    let readings = read_readings(&a.data, tick_ms)?;
    let machine = machine_arg(a.machine.as_deref())?;
    let samples = match machine {
        Some(m) => machine_samples(&readings, m)?,
        None => plant_samples(&readings)?,
    };
    let f = forecast(&model, &samples, a.horizon, machine)?;
    Ok(json(&f)? + "\n")
}

fn insights(a: &InsightsArgs, tick_ms: u64) -> Result<String> {
    let model = models::load_risk(&a.model)?;
    let catalog = match &a.catalog {
        Some(p) => Catalog::from_file(p)?,
        None => default_catalog(),
    };
    let readings = read_readings(&a.data, tick_ms)?;
    let latest = readings
        .iter()
        .max_by_key(|r| r.tick)
        .ok_or_else(|| Error::InsufficientData("no readings".into()))?;
    let now = DateTime::from_timestamp_millis(latest.timestamp)
        .ok_or_else(|| Error::Validation("timestamp out of range".into()))?;
    let windows: Vec<_> = smartline_core::csvio::by_machine(&readings)
        .values()
        .filter_map(|own| extract_features(own, model.window).ok())
        .collect();
    let risks = assess_risk(&model, &windows)?;
    Ok(render_table(&generate_insights(&risks, &catalog, now, a.include_low)))
}

fn ask_cmd(a: &AskArgs, tick_ms: u64) -> Result<String> {
    let store = Store::in_memory(StoreOptions {
        time_base: TimeBase::new(TimeBase::DEFAULT_EPOCH_MS, tick_ms),
        ..StoreOptions::default()
    });
    for batch in batches_by_tick(read_readings(&a.data, tick_ms)?) {
        for r in batch {
            store.ingest_reading(r)?;
        }
    }
    let risk = a.risk_model.as_deref().map(models::load_risk).transpose()?;
    let energy = match &a.energy_model {
        Some(p) => vec![(None, models::load_energy(p)?)],
        None => Vec::new(),
    };
    let state = LiveState {
        store: &store,
        alerts: &[],
        risk_model: risk.as_ref(),
        energy_models: &energy,
        insights: &[],
    };
    let remote = crate::config::AssistantSettings {
        remote: a.remote.is_some(),
        endpoint: a.remote.clone(),
        ..Default::default()
    }
    .remote_config();
    let answer = ask(&a.question, &state, &remote)?;
    if a.json {
        Ok(json(&answer)? + "\n")
    } else {
        Ok(answer.text + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn serve_flags_override_config() {
        let cli = Cli::try_parse_from([
            "smartline",
            "serve",
            "--listen",
            "127.0.0.1:9999",
            "--train-on-start",
            "--pace-ms",
            "0",
        ])
        .unwrap();
        let Command::Serve(args) = cli.command else {
            panic!("not serve");
        };
        let config = args.service_config().unwrap();
        assert_eq!(config.listen, "127.0.0.1:9999");
        assert!(config.train_on_start);
        assert_eq!(config.tick_ms, 0);
    }
}

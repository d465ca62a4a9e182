//! Service startup and shutdown.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use smartline_core::csvio::read_sensor_csv;
use smartline_core::maintenance::{default_catalog, Catalog};
use smartline_core::plantsim::{process_map, SimConfig, Simulator};
use smartline_core::scenario::Coefficients;
use smartline_core::{Error, MachineRegistry, Result, Store, StoreOptions};
use tokio::net::TcpListener;
use tokio::sync::watch;

use crate::api::{router, slug, AppState, MachineInfo};
use crate::config::ServiceConfig;
use crate::models::{self, Models};
use crate::pipeline::{batches_by_tick, Pipeline, PipelineOptions};

/// A running service. Dropping it without [`ServiceHandle::shutdown`]
/// leaves the driver thread running until its source is exhausted.
pub struct ServiceHandle {
    addr: SocketAddr,
    pipeline: Arc<Pipeline>,
    stop: Arc<AtomicBool>,
    shutdown_tx: watch::Sender<bool>,
    driver: JoinHandle<Result<u64>>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    /// Whether the reading source has run dry (or failed).
    pub fn source_finished(&self) -> bool {
        self.driver.is_finished()
    }

    /// Stop ingestion, close streams, stop serving and flush the event log.
    /// Returns the number of ticks fed.
    pub async fn shutdown(self) -> Result<u64> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.shutdown_tx.send(true);
        let driver = self.driver;
        let fed = tokio::task::spawn_blocking(move || driver.join())
            .await
            .map_err(|e| Error::Config(format!("driver join: {e}")))?
            .map_err(|_| Error::Config("driver thread panicked".into()))??;
        self.server
            .await
            .map_err(|e| Error::Config(format!("server task: {e}")))??;
        self.pipeline.store().flush()?;
        Ok(fed)
    }
}

enum Source {
    Sim(Simulator),
    Replay(Vec<Vec<smartline_core::SensorReading>>),
}

fn load_sim(config: &ServiceConfig) -> Result<SimConfig> {
    match &config.sim_config {
        Some(path) => SimConfig::from_file(path),
        None => Ok(SimConfig::new(config.seed, config.ticks)),
    }
}

fn load_or_train_models(config: &ServiceConfig, sim: &SimConfig) -> Result<Models> {
    let risk = match &config.risk_model {
        Some(p) if p.is_file() => models::load_risk(p)?,
        _ => {
            tracing::info!("training risk model");
            let model = models::train_default_risk(config.seed)?;
            if let Some(p) = &config.risk_model {
                models::save(p, &model.to_json()?)?;
            }
            model
        }
    };
    let energy = match &config.energy_model {
        Some(p) if p.is_file() => models::load_energy(p)?,
        _ => {
            tracing::info!("training energy model");
            let model = models::train_default_energy(sim)?;
            if let Some(p) = &config.energy_model {
                models::save(p, &model.to_json()?)?;
            }
            model
        }
    };
    if energy.tick_ms != sim.time_base.tick_ms as i64 {
        tracing::warn!(
            model_tick_ms = energy.tick_ms,
            live_tick_ms = sim.time_base.tick_ms,
            "energy model was trained on a different tick length"
        );
    }
    Ok(Models {
        risk: Some(risk),
        energy: vec![(None, energy)],
    })
}

fn open_store(path: Option<&Path>, options: StoreOptions) -> Result<Store> {
    match path {
        Some(p) => Store::open(p, options),
        None => Ok(Store::in_memory(options)),
    }
}

/// Validate, bind, load or train models, then start ingestion and the
/// HTTP server. Fails before anything runs if the port is taken or a model
/// is missing without `train_on_start`.
pub async fn serve(config: ServiceConfig) -> Result<ServiceHandle> {
    config.validate()?;
    config.check_models()?;
    let addr = config.listen_addr()?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))?;
    let addr = listener.local_addr()?;

    let sim = load_sim(&config)?;
    let catalog = match &config.catalog {
        Some(p) => Catalog::from_file(p)?,
        None => default_catalog(),
    };
    let coefficients = match &config.coefficients {
        Some(p) => Coefficients::from_file(p)?,
        None => Coefficients::default(),
    };
    let setup = config.clone();
    let sim_for_models = sim.clone();
    let models = tokio::task::spawn_blocking(move || load_or_train_models(&setup, &sim_for_models))
        .await
        .map_err(|e| Error::Config(format!("model setup: {e}")))??;

    let options = StoreOptions {
        registry: MachineRegistry::new(sim.profiles.iter().map(|p| p.machine)),
        time_base: sim.time_base,
        ..StoreOptions::default()
    };
    let source = match &config.replay_csv {
        Some(path) => Source::Replay(batches_by_tick(read_sensor_csv(
            std::fs::File::open(path)?,
            sim.time_base,
        )?)),
        None => Source::Sim(Simulator::new(sim.clone())?),
    };
    let store = Arc::new(open_store(config.event_log.as_deref(), options)?);
    let pipeline = Arc::new(Pipeline::new(
        store,
        models,
        PipelineOptions {
            seed: config.seed,
            contamination: config.contamination,
            energy_contamination: config.energy_contamination,
            schedule: config.schedule,
            catalog,
            include_low: false,
        },
    )?);

    let processes = process_map(&sim.profiles);
    let machines: Vec<MachineInfo> = sim
        .profiles
        .iter()
        .map(|p| MachineInfo {
            id: p.machine,
            slug: slug(p.machine),
            process: processes[&p.machine].clone(),
            metrics: p.metrics.keys().copied().collect(),
        })
        .collect();

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let state = AppState {
        pipeline: pipeline.clone(),
        coefficients: Arc::new(coefficients),
        remote: Arc::new(config.assistant.remote_config()),
        machines: Arc::new(machines),
        shutdown: shutdown_rx.clone(),
    };
    let mut server_shutdown = shutdown_rx;
    let server = tokio::spawn(async move {
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async move {
                let _ = server_shutdown.wait_for(|stop| *stop).await;
            })
            .await
    });

    let stop = Arc::new(AtomicBool::new(false));
    let pace = Duration::from_millis(config.tick_ms);
    let driver = {
        let pipeline = pipeline.clone();
        let stop = stop.clone();
        std::thread::Builder::new()
            .name("smartline-ingest".into())
            .spawn(move || match source {
                Source::Sim(mut sim) => pipeline.drive(&mut sim, pace, &stop),
                Source::Replay(batches) => pipeline.drive_batches(batches, pace, &stop),
            })?
    };
    tracing::info!(%addr, "serving");
    Ok(ServiceHandle {
        addr,
        pipeline,
        stop,
        shutdown_tx,
        driver,
        server,
    })
}

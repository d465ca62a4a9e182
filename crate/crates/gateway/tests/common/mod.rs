#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde_json::Value;
use smartline_core::plantsim::SimConfig;
use smartline_gateway::{models, ServiceConfig, ServiceHandle};

pub struct TrainedModels {
    _dir: tempfile::TempDir,
    pub risk: PathBuf,
    pub energy: PathBuf,
}

/// Seed-42 models, trained once per test binary.
pub fn trained() -> &'static TrainedModels {
    static MODELS: OnceLock<TrainedModels> = OnceLock::new();
    MODELS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let risk = dir.path().join("risk.json");
        let energy = dir.path().join("energy.json");
        models::save(&risk, &models::train_default_risk(42).unwrap().to_json().unwrap()).unwrap();
        models::save(
            &energy,
            &models::train_default_energy(&SimConfig::new(42, 1))
                .unwrap()
                .to_json()
                .unwrap(),
        )
        .unwrap();
        TrainedModels {
            _dir: dir,
            risk,
            energy,
        }
    })
}

/// Unpaced, ephemeral-port config over pre-trained models.
pub fn config(ticks: u64) -> ServiceConfig {
    let m = trained();
    ServiceConfig {
        listen: "127.0.0.1:0".into(),
        tick_ms: 0,
        ticks,
        risk_model: Some(m.risk.clone()),
        energy_model: Some(m.energy.clone()),
        ..ServiceConfig::default()
    }
}

pub async fn wait_for_source(handle: &ServiceHandle) {
    let started = Instant::now();
    while !handle.source_finished() {
        assert!(started.elapsed() < Duration::from_secs(120), "source did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

pub fn url(handle: &ServiceHandle, path: &str) -> String {
    format!("http://{}{path}", handle.local_addr())
}

pub async fn get(handle: &ServiceHandle, path: &str) -> (u16, Value) {
    let resp = reqwest::get(url(handle, path)).await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

pub async fn post(handle: &ServiceHandle, path: &str, body: &str) -> (u16, Value) {
    let resp = reqwest::Client::new()
        .post(url(handle, path))
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

/// Panic with every violation if `value` does not match `schemas/<name>.v1.schema.json`.
pub fn assert_schema(name: &str, value: &Value) {
    let path = schema_dir().join(format!("{name}.v1.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(value)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}\n{value:#}");
}

/// One parsed server-sent event.
#[derive(Debug, Clone, PartialEq)]
pub struct SseEvent {
    pub event: String,
    pub id: Option<String>,
    pub data: String,
}

/// Read events until the server closes the stream.
pub async fn read_events(mut resp: reqwest::Response) -> Vec<SseEvent> {
    let mut buf = String::new();
    let mut out = Vec::new();
    while let Ok(Some(chunk)) = resp.chunk().await {
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            let mut ev = SseEvent {
                event: "message".into(),
                id: None,
                data: String::new(),
            };
            let mut has_data = false;
            for line in frame.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    ev.event = v.trim_start().into();
                } else if let Some(v) = line.strip_prefix("id:") {
                    ev.id = Some(v.trim_start().into());
                } else if let Some(v) = line.strip_prefix("data:") {
                    ev.data.push_str(v.strip_prefix(' ').unwrap_or(v));
                    has_data = true;
                }
            }
            if has_data {
                out.push(ev);
            }
        }
    }
    out
}

pub fn degradation_toml(ticks: u64) -> String {
    format!(
        r#"version = 1
seed = 42
ticks = {ticks}

[[degradation]]
machine = "Formation Equipment"
metric = "PowerLoad"
start_tick = 700
drift_per_tick = 0.375

[[degradation]]
machine = "Sealing Machine"
metric = "Temperature"
start_tick = 1300
drift_per_tick = 0.25

[[degradation]]
machine = "Electrolyte Filling Machine"
metric = "Pressure"
start_tick = 1900
drift_per_tick = 0.375
"#
    )
}

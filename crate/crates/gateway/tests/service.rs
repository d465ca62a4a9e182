mod common;

use std::time::Duration;

use common::*;
use serde_json::{json, Value};
use smartline_core::maintenance::{degradation_benchmark, DEFAULT_HORIZON};
use smartline_core::plantsim::{generate_labeled_dataset, SimConfig};
use smartline_core::store::replay_log_with;
use smartline_core::{EventKind, MachineId, StoreOptions};
use smartline_gateway::{serve, ServiceConfig};

#[tokio::test(flavor = "multi_thread")]
async fn machines_after_a_hundred_ticks() {
    let handle = serve(config(100)).await.unwrap();
    wait_for_source(&handle).await;
    let (status, body) = get(&handle, "/machines").await;
    assert_eq!(status, 200);
    assert_schema("machines", &body);
    let ids: Vec<&str> = body["machines"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["id"].as_str().unwrap())
        .collect();
    let canonical: Vec<&str> = MachineId::ALL.iter().map(|m| m.name()).collect();
    assert_eq!(ids, canonical);
    assert_eq!(handle.shutdown().await.unwrap(), 100);
}

#[tokio::test(flavor = "multi_thread")]
async fn second_server_on_same_port_fails() {
    let first = serve(config(10)).await.unwrap();
    let taken = ServiceConfig {
        listen: first.local_addr().to_string(),
        ..config(10)
    };
    let err = serve(taken).await.err().expect("second bind must fail");
    assert!(err.to_string().contains("cannot listen"), "{err}");
    first.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_model_without_train_flag_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        risk_model: Some(dir.path().join("absent.json")),
        ..config(10)
    };
    let err = serve(cfg.clone()).await.err().expect("startup must fail");
    assert!(err.to_string().contains("--train-on-start"), "{err}");

    let cfg = ServiceConfig {
        train_on_start: true,
        ..cfg
    };
    let handle = serve(cfg).await.unwrap();
    assert!(dir.path().join("absent.json").is_file(), "trained model is persisted");
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn responses_match_schemas_and_errors_are_mapped() {
    let handle = serve(config(200)).await.unwrap();
    wait_for_source(&handle).await;

    let (s, body) = get(&handle, "/machines/sealing-machine/readings?from=100&to=149").await;
    assert_eq!(s, 200);
    assert_schema("readings", &body);
    assert_eq!(body["readings"].as_array().unwrap().len(), 50);
    let (s, by_name) = get(&handle, "/machines/Sealing%20Machine/readings?from=100&to=149").await;
    assert_eq!(s, 200);
    assert_eq!(by_name, body);

    let (s, body) = get(&handle, "/machines/Mixer/readings").await;
    assert_eq!((s, body["code"].as_str()), (404, Some("unknown_machine")));
    assert_schema("error", &body);
    let (s, body) = get(&handle, "/machines/agv/readings?from=9&to=3").await;
    assert_eq!((s, body["code"].as_str()), (400, Some("validation")));
    let (s, body) = get(&handle, "/machines/agv/readings?from=abc").await;
    assert_eq!((s, body["code"].as_str()), (400, Some("validation")));
    assert_schema("error", &body);

    let (s, body) = get(&handle, "/alerts?window=3600").await;
    assert_eq!(s, 200);
    assert_schema("alerts", &body);
    let (s, _) = get(&handle, "/alerts?window=0").await;
    assert_eq!(s, 400);

    let (s, body) = get(&handle, "/maintenance/insights").await;
    assert_eq!(s, 200);
    assert_schema("insights", &body);

    let (s, body) = get(&handle, "/energy/forecast?horizon=24").await;
    assert_eq!(s, 200);
    assert_schema("forecast", &body);
    assert_eq!(body["forecast"]["steps"].as_array().unwrap().len(), 24);
    assert_eq!(body["forecast"]["generated_at"], 199);
    let (s, body) = get(&handle, "/energy/forecast?machine=agv").await;
    assert_eq!((s, body["code"].as_str()), (404, Some("no_model")));
    let (s, _) = get(&handle, "/energy/forecast?horizon=0").await;
    assert_eq!(s, 400);

    let (s, body) = get(&handle, "/energy/flows?window=60").await;
    assert_eq!(s, 200);
    assert_schema("flows", &body);
    assert_eq!(
        (body["from_tick"].as_u64(), body["to_tick"].as_u64()),
        (Some(140), Some(199))
    );
    let sum: f64 = body["edges"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["source"]["kind"] == "machine")
        .map(|e| e["energy_kwh"].as_f64().unwrap())
        .sum();
    let total = body["total_kwh"].as_f64().unwrap();
    assert!((sum - total).abs() <= 1e-6 * total, "{sum} vs {total}");

    let (s, body) = get(&handle, "/no/such/route").await;
    assert_eq!((s, body["code"].as_str()), (404, Some("not_found")));
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn scenario_fixed_point_and_validation() {
    let handle = serve(config(120)).await.unwrap();
    wait_for_source(&handle).await;

    let request = json!({"mixing_ratio": 1.0, "load_ratio": 1.0, "coating_ratio": 1.0});
    assert_schema("scenario_request", &request);
    let (s, body) = post(&handle, "/scenario/simulate", &request.to_string()).await;
    assert_eq!(s, 200, "{body}");
    assert_schema("projection", &body);
    for delta in ["delta_throughput", "delta_energy_kw", "delta_defect_rate"] {
        assert_eq!(body["projection"][delta], 0.0, "{delta}");
    }

    let with_baseline = json!({
        "mixing_ratio": 1.0, "load_ratio": 1.1, "coating_ratio": 1.0,
        "baseline": {"throughput": 100.0, "energy_kw": 50.0, "defect_rate": 0.02}
    });
    let (s, body) = post(&handle, "/scenario/simulate", &with_baseline.to_string()).await;
    assert_eq!(s, 200);
    // 50 kW * 1.1^1.2
    let expected = 50.0 * 1.1f64.powf(1.2) - 50.0;
    assert!((body["projection"]["delta_energy_kw"].as_f64().unwrap() - expected).abs() < 1e-9);

    let (s, body) = post(
        &handle,
        "/scenario/simulate",
        r#"{"mixing_ratio":2.0,"load_ratio":1.0,"coating_ratio":1.0}"#,
    )
    .await;
    assert_eq!((s, body["code"].as_str()), (400, Some("validation")));
    assert!(body["message"].as_str().unwrap().contains("mixing_ratio"));
    let (s, body) = post(&handle, "/scenario/simulate", r#"{"mixing_ratio":1.0}"#).await;
    assert_eq!((s, body["code"].as_str()), (422, Some("schema_mismatch")));
    let (s, body) = post(&handle, "/scenario/simulate", r#"{"mixing_ratio":"#).await;
    assert_eq!((s, body["code"].as_str()), (400, Some("validation")));
    handle.shutdown().await.unwrap();
}

fn degradation_service(dir: &std::path::Path, ticks: u64, assess_every: u64) -> ServiceConfig {
    let sim = dir.join("sim.toml");
    std::fs::write(&sim, degradation_toml(ticks)).unwrap();
    let mut cfg = config(ticks);
    cfg.sim_config = Some(sim);
    cfg.schedule.assess_every = assess_every;
    cfg
}

#[test]
fn degradation_toml_matches_benchmark() {
    let parsed = SimConfig::from_toml_str(&degradation_toml(3000), None).unwrap();
    assert_eq!(parsed, degradation_benchmark(42));
}

#[tokio::test(flavor = "multi_thread")]
async fn insights_rank_the_degrading_machine_first_and_assistant_agrees() {
    let labeled = generate_labeled_dataset(&degradation_benchmark(42), DEFAULT_HORIZON).unwrap();
    let crossing = labeled
        .crossings
        .iter()
        .find(|c| c.machine == MachineId::FormationEquipment)
        .unwrap()
        .tick;
    // Last assessment lands within 10 ticks before the crossing.
    let ticks = (crossing - 1) / 10 * 10;
    let dir = tempfile::tempdir().unwrap();
    let handle = serve(degradation_service(dir.path(), ticks, 10)).await.unwrap();
    wait_for_source(&handle).await;

    let (s, body) = get(&handle, "/maintenance/insights").await;
    assert_eq!(s, 200);
    assert_schema("insights", &body);
    assert_eq!(body["tick"], ticks - 1);
    let first = &body["insights"][0];
    assert_eq!(first["machine"], "Formation Equipment", "{body:#}");
    assert_eq!(first["task"], "Check Voltage Stability");
    assert_eq!(first["priority"], "High");

    let (s, answer) = post(
        &handle,
        "/assistant/query",
        r#"{"q": "Which machines are most likely to fail?"}"#,
    )
    .await;
    assert_eq!(s, 200);
    assert_schema("answer", &answer);
    assert_eq!(answer["source"], "rule");
    assert_eq!(answer["intent"]["kind"], "failure_risk_ranking");
    assert!(answer["text"].as_str().unwrap().contains("Formation Equipment"));
    // Grounded: the ranking equals the insight snapshot taken at the same tick.
    let answered: Vec<(Value, Value)> = answer["data"]["risks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["machine"].clone(), r["risk"].clone()))
        .collect();
    let published: Vec<(Value, Value)> = body["risks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["machine"].clone(), r["risk"].clone()))
        .collect();
    assert_eq!(answered, published);

    let (s, body) = post(&handle, "/assistant/query", r#"{"question": "hi"}"#).await;
    assert_eq!((s, body["code"].as_str()), (422, Some("schema_mismatch")));
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn replay_after_shutdown_matches_queries() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let mut cfg = config(1300);
    cfg.event_log = Some(log.clone());
    let handle = serve(cfg).await.unwrap();
    wait_for_source(&handle).await;

    let mut before = Vec::new();
    for m in MachineId::ALL {
        let path = format!("/machines/{}/readings?from=0&to=1299", smartline_gateway::api::slug(m));
        before.push(get(&handle, &path).await.1["readings"].clone());
    }
    let (_, alerts) = get(&handle, "/alerts?window=100000").await;
    let (_, insights) = get(&handle, "/maintenance/insights").await;
    handle.shutdown().await.unwrap();

    let mut logged_alerts = Vec::new();
    let mut last_insight = Value::Null;
    let store = replay_log_with(&log, StoreOptions::default(), |rec| match rec.kind {
        EventKind::Alert => logged_alerts.push(rec.payload.clone()),
        EventKind::Insight => last_insight = rec.payload.clone(),
        _ => {}
    })
    .unwrap();
    for (m, expected) in MachineId::ALL.iter().zip(&before) {
        let replayed = serde_json::to_value(store.query_window(*m, 0, 1299).unwrap()).unwrap();
        assert_eq!(&replayed, expected, "{m}");
    }
    assert_eq!(Value::Array(logged_alerts), alerts["alerts"]);
    assert_eq!(last_insight["insights"], insights["insights"]);
    assert_eq!(last_insight["tick"], insights["tick"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_after_torn_write_resumes_without_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let mut cfg = config(50);
    cfg.event_log = Some(log.clone());
    let handle = serve(cfg.clone()).await.unwrap();
    wait_for_source(&handle).await;
    handle.shutdown().await.unwrap();

    // Simulate a kill mid-tick: drop the last three readings and tear the
    // final line.
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let keep = lines.len() - 3;
    let mut damaged = lines[..keep].join("\n");
    damaged.push('\n');
    damaged.push_str(&lines[keep][..lines[keep].len() / 2]);
    std::fs::write(&log, damaged).unwrap();

    let handle = serve(ServiceConfig { ticks: 80, ..cfg }).await.unwrap();
    wait_for_source(&handle).await;
    handle.shutdown().await.unwrap();

    let mut sequences = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let store = replay_log_with(&log, StoreOptions::default(), |_| {}).unwrap();
    for line in std::fs::read_to_string(&log).unwrap().lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        sequences.push(rec["sequence"].as_u64().unwrap());
        if rec["kind"] == "reading" {
            let key = (
                rec["payload"]["machine"].to_string(),
                rec["payload"]["tick"].as_u64().unwrap(),
            );
            assert!(seen.insert(key.clone()), "duplicate reading {key:?}");
        }
    }
    assert_eq!(sequences, (0..sequences.len() as u64).collect::<Vec<_>>());
    for m in MachineId::ALL {
        let ticks: Vec<u64> = store.query_window(m, 0, 79).unwrap().iter().map(|r| r.tick).collect();
        assert_eq!(ticks, (0..80).collect::<Vec<_>>(), "{m}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn alert_stream_fans_out_in_order_and_carries_the_spike() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.toml");
    std::fs::write(
        &sim,
        r#"version = 1
seed = 42
ticks = 1150

[[fault]]
machine = "Sealing Machine"
metric = "Temperature"
start_tick = 1100
duration = 5
magnitude_sigmas = 6.0
"#,
    )
    .unwrap();
    let mut cfg = config(1150);
    cfg.sim_config = Some(sim);
    cfg.tick_ms = 2;
    let handle = serve(cfg).await.unwrap();

    let a = reqwest::get(url(&handle, "/stream/alerts")).await.unwrap();
    let b = reqwest::get(url(&handle, "/stream/alerts")).await.unwrap();
    assert_eq!((a.status().as_u16(), b.status().as_u16()), (200, 200));
    let a = tokio::spawn(read_events(a));
    let b = tokio::spawn(read_events(b));
    let readings = reqwest::get(url(&handle, "/stream/readings")).await.unwrap();
    let readings = tokio::spawn(read_events(readings));
    // Detectors warm up for 1000 ticks, so nothing is missed by subscribing now.
    assert!(handle.pipeline().store().latest_tick().unwrap_or(0) < 900);
    wait_for_source(&handle).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    let emitted = handle.pipeline().snapshot().alerts.len();
    handle.shutdown().await.unwrap();

    let a = a.await.unwrap();
    let b = b.await.unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), emitted);
    let mut last = None;
    for ev in &a {
        assert_eq!(ev.event, "alert");
        let body: Value = serde_json::from_str(&ev.data).unwrap();
        assert_schema("alert_event", &body);
        let seq = body["sequence"].as_u64().unwrap();
        assert_eq!(ev.id.as_deref(), Some(seq.to_string().as_str()));
        assert!(last.is_none_or(|l| seq > l));
        last = Some(seq);
    }
    let spike = a
        .iter()
        .map(|ev| serde_json::from_str::<Value>(&ev.data).unwrap())
        .find(|v| v["machine"] == "Sealing Machine" && (1100..1105).contains(&v["tick"].as_u64().unwrap()))
        .expect("spike alert on the stream");
    assert_eq!(spike["deviations"][0]["feature"], "Temperature");

    // The readings subscriber may join a tick late; what it gets must be a
    // gap-free suffix that ends with the last tick.
    let readings: Vec<Value> = readings
        .await
        .unwrap()
        .iter()
        .map(|ev| serde_json::from_str(&ev.data).unwrap())
        .collect();
    assert!(readings.len() > 6 * 1100, "{}", readings.len());
    assert_schema("reading_event", &readings[0]);
    let seqs: Vec<u64> = readings.iter().map(|r| r["sequence"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[1] > w[0]));
    let ticks: Vec<u64> = readings.iter().map(|r| r["tick"].as_u64().unwrap()).collect();
    assert!(ticks.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
    assert_eq!(*ticks.last().unwrap(), 1149);
    assert_eq!(ticks.iter().filter(|t| **t == 1149).count(), 6);
}

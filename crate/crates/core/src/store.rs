//! In-memory time-window store backed by an append-only JSON-lines event log.
//!
//! Log line layout (keys always in this order, `\n` terminated):
//!
//! ```text
//! {"sequence":0,"kind":"reading","payload":{"machine":"AGV","tick":0,"timestamp":...,"values":{...}}}
//! ```
//!
//! Sequence numbers start at 0 and never skip. The store keeps the most recent
//! [`DEFAULT_RETENTION`] readings per machine; older readings live only in the
//! log.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MachineId, MachineRegistry, SensorReading, TimeBase};

pub const DEFAULT_RETENTION: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Reading,
    Alert,
    Insight,
    Forecast,
    Scenario,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogRecord {
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub registry: MachineRegistry,
    pub time_base: TimeBase,
    pub retention: usize,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            registry: MachineRegistry::default(),
            time_base: TimeBase::default(),
            retention: DEFAULT_RETENTION,
        }
    }
}

type Listener = Arc<dyn Fn(u64, &SensorReading) + Send + Sync>;

struct EventLog {
    next_sequence: u64,
    writer: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

impl EventLog {
    fn append(&mut self, kind: EventKind, payload: serde_json::Value) -> Result<u64> {
        let record = EventLogRecord {
            sequence: self.next_sequence,
            kind,
            payload,
        };
        if let Some(writer) = self.writer.as_mut() {
            let mut line = serde_json::to_vec(&record).map_err(Error::from_json)?;
            line.push(b'\n');
            writer.write_all(&line)?;
            writer.flush()?;
        }
        self.next_sequence += 1;
        Ok(record.sequence)
    }
}

#[derive(Default)]
struct Series {
    readings: HashMap<MachineId, VecDeque<SensorReading>>,
    last_tick: HashMap<MachineId, u64>,
}

/// Thread-safe reading store. One writer at a time, many concurrent readers.
pub struct Store {
    options: StoreOptions,
    series: RwLock<Series>,
    log: Mutex<EventLog>,
    listeners: RwLock<Vec<Listener>>,
}

impl Store {
    /// Store without a log file; sequence numbers are still assigned.
    pub fn in_memory(options: StoreOptions) -> Self {
        Self::with_log(options, 0, None, None)
    }

    /// Create a fresh log at `path` (truncating any existing file).
    pub fn create(path: impl AsRef<Path>, options: StoreOptions) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        Ok(Self::with_log(options, 0, Some(BufWriter::new(file)), Some(path)))
    }

    /// Replay the log at `path` (if present) and keep appending to it.
    ///
    /// A final line without its `\n` terminator is a torn write from an
    /// interrupted append; it is cut off before appending resumes. Any other
    /// damage is a replay error.
    pub fn open(path: impl AsRef<Path>, options: StoreOptions) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            return Self::create(path, options);
        }
        let intact_len = intact_prefix_len(&path)?;
        let file = OpenOptions::new().write(true).open(&path)?;
        file.set_len(intact_len)?;
        drop(file);

        let store = replay_log_with(&path, options, |_| {})?;
        let file = OpenOptions::new().append(true).open(&path)?;
        {
            let mut log = store.log.lock().expect("log lock poisoned");
            log.writer = Some(BufWriter::new(file));
            log.path = Some(path);
        }
        Ok(store)
    }

    fn with_log(
        options: StoreOptions,
        next_sequence: u64,
        writer: Option<BufWriter<File>>,
        path: Option<PathBuf>,
    ) -> Self {
        Self {
            options,
            series: RwLock::new(Series::default()),
            log: Mutex::new(EventLog {
                next_sequence,
                writer,
                path,
            }),
            listeners: RwLock::new(Vec::new()),
        }
    }

    pub fn options(&self) -> &StoreOptions {
        &self.options
    }

    pub fn registry(&self) -> &MachineRegistry {
        &self.options.registry
    }

    pub fn time_base(&self) -> TimeBase {
        self.options.time_base
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.log.lock().expect("log lock poisoned").path.clone()
    }

    pub fn next_sequence(&self) -> u64 {
        self.log.lock().expect("log lock poisoned").next_sequence
    }

    /// Register a callback invoked after every successful reading ingest,
    /// in sequence order.
    pub fn subscribe(&self, listener: impl Fn(u64, &SensorReading) + Send + Sync + 'static) {
        self.listeners
            .write()
            .expect("listener lock poisoned")
            .push(Arc::new(listener));
    }

    pub fn ingest_reading(&self, reading: SensorReading) -> Result<u64> {
        if !self.options.registry.contains(reading.machine) {
            return Err(Error::UnknownMachine(reading.machine.to_string()));
        }
        reading.validate()?;

        let mut log = self.log.lock().expect("log lock poisoned");
        {
            let series = self.series.read().expect("store lock poisoned");
            if let Some(&last) = series.last_tick.get(&reading.machine) {
                if reading.tick <= last {
                    return Err(Error::Ordering {
                        machine: reading.machine.to_string(),
                        got: reading.tick,
                        last,
                    });
                }
            }
        }
        let payload = serde_json::to_value(&reading).map_err(Error::from_json)?;
        let sequence = log.append(EventKind::Reading, payload)?;
        self.insert(reading.clone());

        let listeners = self.listeners.read().expect("listener lock poisoned").clone();
        for listener in &listeners {
            listener(sequence, &reading);
        }
        Ok(sequence)
    }

    /// Append a non-reading event (alert, insight, ...) to the log.
    pub fn append_event<T: Serialize>(&self, kind: EventKind, payload: &T) -> Result<u64> {
        if kind == EventKind::Reading {
            return Err(Error::validation("readings must go through ingest_reading"));
        }
        let payload = serde_json::to_value(payload).map_err(Error::from_json)?;
        self.log.lock().expect("log lock poisoned").append(kind, payload)
    }

    fn insert(&self, reading: SensorReading) {
        let mut series = self.series.write().expect("store lock poisoned");
        series.last_tick.insert(reading.machine, reading.tick);
        let buf = series.readings.entry(reading.machine).or_default();
        buf.push_back(reading);
        while buf.len() > self.options.retention {
            buf.pop_front();
        }
    }

    /// Readings with `from_tick <= tick <= to_tick`, ascending by tick.
    pub fn query_window(&self, machine: MachineId, from_tick: u64, to_tick: u64) -> Result<Vec<SensorReading>> {
        if !self.options.registry.contains(machine) {
            return Err(Error::UnknownMachine(machine.to_string()));
        }
        if from_tick > to_tick {
            return Err(Error::validation(format!("inverted window [{from_tick}, {to_tick}]")));
        }
        let series = self.series.read().expect("store lock poisoned");
        let Some(buf) = series.readings.get(&machine) else {
            return Ok(Vec::new());
        };
        let start = buf.partition_point(|r| r.tick < from_tick);
        let end = buf.partition_point(|r| r.tick <= to_tick);
        Ok(buf.range(start..end).cloned().collect())
    }

    /// The most recent `n` readings for `machine`, ascending by tick.
    pub fn tail(&self, machine: MachineId, n: usize) -> Vec<SensorReading> {
        let series = self.series.read().expect("store lock poisoned");
        series
            .readings
            .get(&machine)
            .map(|buf| buf.iter().skip(buf.len().saturating_sub(n)).cloned().collect())
            .unwrap_or_default()
    }

    pub fn latest(&self, machine: MachineId) -> Option<SensorReading> {
        let series = self.series.read().expect("store lock poisoned");
        series.readings.get(&machine).and_then(|b| b.back().cloned())
    }

    /// Highest tick stored for any machine.
    pub fn latest_tick(&self) -> Option<u64> {
        let series = self.series.read().expect("store lock poisoned");
        series.last_tick.values().copied().max()
    }

    pub fn len(&self, machine: MachineId) -> usize {
        let series = self.series.read().expect("store lock poisoned");
        series.readings.get(&machine).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        let series = self.series.read().expect("store lock poisoned");
        series.readings.values().all(VecDeque::is_empty)
    }

    /// Flush any buffered log output.
    pub fn flush(&self) -> Result<()> {
        if let Some(w) = self.log.lock().expect("log lock poisoned").writer.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

/// Rebuild a store from a log file using default options.
pub fn replay_log(path: impl AsRef<Path>) -> Result<Store> {
    replay_log_with(path, StoreOptions::default(), |_| {})
}

/// Rebuild a store from a log file. Non-reading records are handed to
/// `on_event` in sequence order. The returned store has no log attached.
pub fn replay_log_with(
    path: impl AsRef<Path>,
    options: StoreOptions,
    mut on_event: impl FnMut(&EventLogRecord),
) -> Result<Store> {
    let reader = BufReader::new(File::open(path)?);
    let store = Store::in_memory(options);
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let expected = idx as u64;
        let line = line.map_err(|e| Error::Replay {
            line: line_no,
            message: e.to_string(),
        })?;
        let record: EventLogRecord = serde_json::from_str(&line).map_err(|e| Error::Replay {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.sequence != expected {
            return Err(Error::Integrity {
                record: idx,
                expected,
                found: record.sequence,
            });
        }
        match record.kind {
            EventKind::Reading => {
                let reading: SensorReading =
                    serde_json::from_value(record.payload.clone()).map_err(|e| Error::Replay {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                store.ingest_reading(reading).map_err(|e| Error::Replay {
                    line: line_no,
                    message: e.to_string(),
                })?;
            }
            _ => {
                store.log.lock().expect("log lock poisoned").next_sequence += 1;
                on_event(&record);
            }
        }
    }
    Ok(store)
}

fn intact_prefix_len(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path)?;
    Ok(match bytes.iter().rposition(|&b| b == b'\n') {
        Some(pos) => pos as u64 + 1,
        None => 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Metric;

    fn reading(machine: MachineId, tick: u64, value: f64) -> SensorReading {
        SensorReading::new(machine, tick, TimeBase::default().timestamp(tick)).with(Metric::Temperature, value)
    }

    #[test]
    fn first_reading_gets_sequence_zero() {
        let store = Store::in_memory(StoreOptions::default());
        assert_eq!(store.ingest_reading(reading(MachineId::Agv, 0, 1.0)).unwrap(), 0);
        assert_eq!(store.ingest_reading(reading(MachineId::Agv, 1, 1.0)).unwrap(), 1);
    }

    #[test]
    fn nan_is_validation_error() {
        let store = Store::in_memory(StoreOptions::default());
        let err = store.ingest_reading(reading(MachineId::Agv, 0, f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert_eq!(store.next_sequence(), 0);
    }

    #[test]
    fn out_of_order_tick_rejected() {
        let store = Store::in_memory(StoreOptions::default());
        store.ingest_reading(reading(MachineId::Agv, 5, 1.0)).unwrap();
        let err = store.ingest_reading(reading(MachineId::Agv, 5, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Ordering { got: 5, last: 5, .. }));
        // other machines keep their own ordering
        store.ingest_reading(reading(MachineId::AgingChamber, 1, 1.0)).unwrap();
    }

    #[test]
    fn unregistered_machine_rejected() {
        let options = StoreOptions {
            registry: MachineRegistry::new([MachineId::Agv]),
            ..Default::default()
        };
        let store = Store::in_memory(options);
        let err = store
            .ingest_reading(reading(MachineId::SealingMachine, 0, 1.0))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownMachine(_)));
        assert!(matches!(
            store.query_window(MachineId::SealingMachine, 0, 1),
            Err(Error::UnknownMachine(_))
        ));
    }

    #[test]
    fn window_queries() {
        let store = Store::in_memory(StoreOptions::default());
        assert!(store.query_window(MachineId::AgingChamber, 0, 10).unwrap().is_empty());
        for t in 1..=3 {
            store
                .ingest_reading(reading(MachineId::AgingChamber, t, t as f64))
                .unwrap();
        }
        let all = store.query_window(MachineId::AgingChamber, 0, 100).unwrap();
        assert_eq!(all.iter().map(|r| r.tick).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(store.query_window(MachineId::AgingChamber, 2, 3).unwrap().len(), 2);
        assert_eq!(store.query_window(MachineId::AgingChamber, 3, 3).unwrap().len(), 1);
        assert!(matches!(
            store.query_window(MachineId::AgingChamber, 3, 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn retention_drops_oldest() {
        let options = StoreOptions {
            retention: 3,
            ..Default::default()
        };
        let store = Store::in_memory(options);
        for t in 0..5 {
            store.ingest_reading(reading(MachineId::Agv, t, 0.0)).unwrap();
        }
        let ticks: Vec<u64> = store
            .query_window(MachineId::Agv, 0, 10)
            .unwrap()
            .iter()
            .map(|r| r.tick)
            .collect();
        assert_eq!(ticks, vec![2, 3, 4]);
    }

    #[test]
    fn listeners_see_sequence_order() {
        let store = Store::in_memory(StoreOptions::default());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        store.subscribe(move |seq, r| sink.lock().unwrap().push((seq, r.tick)));
        for t in 0..3 {
            store.ingest_reading(reading(MachineId::Agv, t, 0.0)).unwrap();
        }
        assert_eq!(*seen.lock().unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn replay_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let store = Store::create(&path, StoreOptions::default()).unwrap();
        for t in 0..10 {
            store
                .ingest_reading(reading(MachineId::Agv, t, t as f64 * 0.1))
                .unwrap();
        }
        store
            .append_event(EventKind::Alert, &serde_json::json!({"x": 1}))
            .unwrap();
        store.ingest_reading(reading(MachineId::Agv, 10, 1.0)).unwrap();
        store.flush().unwrap();

        let mut events = Vec::new();
        let replayed = replay_log_with(&path, StoreOptions::default(), |e| events.push(e.clone())).unwrap();
        assert_eq!(
            replayed.query_window(MachineId::Agv, 0, 100).unwrap(),
            store.query_window(MachineId::Agv, 0, 100).unwrap()
        );
        assert_eq!(replayed.next_sequence(), 12);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].sequence, 10);
    }

    #[test]
    fn empty_log_replays_to_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        File::create(&path).unwrap();
        let store = replay_log(&path).unwrap();
        assert!(store.is_empty());
        assert_eq!(store.next_sequence(), 0);
    }

    #[test]
    fn sequence_gap_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.jsonl");
        let payload = serde_json::to_value(reading(MachineId::Agv, 0, 1.0)).unwrap();
        let mut lines = String::new();
        for seq in [0u64, 2] {
            let rec = EventLogRecord {
                sequence: seq,
                kind: EventKind::Alert,
                payload: payload.clone(),
            };
            lines.push_str(&serde_json::to_string(&rec).unwrap());
            lines.push('\n');
        }
        std::fs::write(&path, lines).unwrap();
        let err = replay_log(&path).err().unwrap();
        assert!(matches!(
            err,
            Error::Integrity {
                record: 1,
                expected: 1,
                found: 2
            }
        ));
    }

    #[test]
    fn corrupt_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let store = Store::create(&path, StoreOptions::default()).unwrap();
        store.ingest_reading(reading(MachineId::Agv, 0, 1.0)).unwrap();
        drop(store);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        std::fs::write(&path, text).unwrap();
        let err = replay_log(&path).err().unwrap();
        assert!(matches!(err, Error::Replay { line: 2, .. }), "{err}");
    }

    #[test]
    fn open_drops_torn_tail_and_continues_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("torn.jsonl");
        let store = Store::create(&path, StoreOptions::default()).unwrap();
        for t in 0..3 {
            store.ingest_reading(reading(MachineId::Agv, t, 1.0)).unwrap();
        }
        drop(store);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"sequence\":3,\"kind\":\"rea");
        std::fs::write(&path, text).unwrap();

        let store = Store::open(&path, StoreOptions::default()).unwrap();
        assert_eq!(store.next_sequence(), 3);
        assert_eq!(store.ingest_reading(reading(MachineId::Agv, 3, 1.0)).unwrap(), 3);
        drop(store);
        let replayed = replay_log(&path).unwrap();
        assert_eq!(replayed.next_sequence(), 4);
    }
}

//! Core of the smartline plant-intelligence platform: domain types, the
//! reading store and event log, the line simulator, and the analytics built
//! on top of them (tree ensembles, isolation forests, maintenance, energy,
//! scenarios and the operator assistant).

mod artifact;
pub mod assistant;
pub mod csvio;
pub mod energy;
pub mod error;
pub mod forest;
pub mod isoforest;
pub mod maintenance;
pub mod plantsim;
pub mod rng;
pub mod scenario;
pub mod store;
pub mod types;

pub use error::{Error, Result};
pub use store::{replay_log, EventKind, EventLogRecord, Store, StoreOptions};
pub use types::{MachineId, MachineRegistry, Metric, SensorReading, TimeBase};

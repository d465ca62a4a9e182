//! Deterministic battery-line simulator.
//!
//! Each reading value is
//!
//! ```text
//! baseline * (1 + diurnal_amplitude * sin(2π * tick * tick_s / 86400))
//!   + drift + spike + sigma * N(0, 1)
//! ```
//!
//! summed left to right in that order. Noise for each machine comes from its
//! own [`SplitMix64`](crate::rng::SplitMix64) substream seeded with
//! `seed ^ fnv1a64(machine name)`; one normal is drawn per configured metric
//! per tick, in metric order, whether or not its sigma is zero.

mod dataset;
mod faults;
mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MachineId, Metric, TimeBase};

pub use dataset::{generate_labeled_dataset, Crossing, LabeledDataset, LabeledRow};
pub use faults::{inject_faults, spike_schedule, FaultInterval};
pub use sim::{run, step, SimState, Simulator};

pub const PROFILE_VERSION: u32 = 1;
pub const SIM_CONFIG_VERSION: u32 = 1;

const DEFAULT_PROFILE_TOML: &str = include_str!("../../config/plant_profile.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricProfile {
    pub baseline: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineProfile {
    pub machine: MachineId,
    /// Line stage this machine's energy flows into.
    pub process: String,
    pub metrics: BTreeMap<Metric, MetricProfile>,
}

impl MachineProfile {
    pub fn baseline(&self, metric: Metric) -> Option<f64> {
        self.metrics.get(&metric).map(|p| p.baseline)
    }

    pub fn sigma(&self, metric: Metric) -> Option<f64> {
        self.metrics.get(&metric).map(|p| p.sigma)
    }

    pub fn threshold(&self, metric: Metric) -> Option<f64> {
        self.metrics.get(&metric).and_then(|p| p.threshold)
    }

    pub fn validate(&self) -> Result<()> {
        for (metric, p) in &self.metrics {
            let (lo, hi) = metric.range();
            if !(lo..=hi).contains(&p.baseline) {
                return Err(Error::validation(format!(
                    "{} {metric}: baseline {} outside [{lo}, {hi}]",
                    self.machine, p.baseline
                )));
            }
            if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
                return Err(Error::validation(format!(
                    "{} {metric}: sigma must be a non-negative number",
                    self.machine
                )));
            }
            if let Some(t) = p.threshold {
                if !t.is_finite() {
                    return Err(Error::validation(format!(
                        "{} {metric}: threshold must be finite",
                        self.machine
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ProfileFile {
    version: u32,
    machine: Vec<ProfileEntry>,
}

#[derive(Debug, Deserialize)]
struct ProfileEntry {
    name: String,
    process: String,
    metrics: Vec<MetricEntry>,
}

#[derive(Debug, Deserialize)]
struct MetricEntry {
    metric: Metric,
    #[serde(flatten)]
    profile: MetricProfile,
}

/// Parse a profile table. Machines keep registry order regardless of file order.
pub fn parse_profiles(text: &str) -> Result<Vec<MachineProfile>> {
    let file: ProfileFile = toml::from_str(text).map_err(Error::from_toml)?;
    if file.version != PROFILE_VERSION {
        return Err(Error::Version {
            found: file.version,
            expected: PROFILE_VERSION,
        });
    }
    let mut profiles = Vec::with_capacity(file.machine.len());
    for entry in file.machine {
        let machine: MachineId = entry.name.parse()?;
        let mut metrics = BTreeMap::new();
        for m in entry.metrics {
            if metrics.insert(m.metric, m.profile).is_some() {
                return Err(Error::validation(format!(
                    "{machine}: metric {} listed twice",
                    m.metric
                )));
            }
        }
        let profile = MachineProfile {
            machine,
            process: entry.process,
            metrics,
        };
        profile.validate()?;
        profiles.push(profile);
    }
    profiles.sort_by_key(|p| p.machine);
    if profiles.windows(2).any(|w| w[0].machine == w[1].machine) {
        return Err(Error::validation("machine listed twice in profile table"));
    }
    Ok(profiles)
}

/// The shipped profile table for all six machines.
pub fn default_profiles() -> Vec<MachineProfile> {
    parse_profiles(DEFAULT_PROFILE_TOML).expect("built-in profile table is valid")
}

/// Metrics present on every profile, in metric order.
/// Machine → process stage, as used by the energy-flow view.
pub fn process_map(profiles: &[MachineProfile]) -> BTreeMap<MachineId, String> {
    profiles.iter().map(|p| (p.machine, p.process.clone())).collect()
}

pub fn shared_metrics(profiles: &[MachineProfile]) -> Vec<Metric> {
    let mut iter = profiles.iter();
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    let mut set: BTreeSet<Metric> = first.metrics.keys().copied().collect();
    for p in iter {
        set.retain(|m| p.metrics.contains_key(m));
    }
    set.into_iter().collect()
}

/// Additive spike of `magnitude_sigmas * sigma` over `[start_tick, start_tick + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub machine: MachineId,
    pub metric: Metric,
    pub start_tick: u64,
    pub duration: u64,
    pub magnitude_sigmas: f64,
}

impl FaultSpec {
    pub fn end_tick(&self) -> u64 {
        self.start_tick + self.duration
    }

    pub fn is_active(&self, tick: u64) -> bool {
        (self.start_tick..self.end_tick()).contains(&tick)
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration < 1 {
            return Err(Error::validation("fault duration must be at least 1 tick"));
        }
        if !(self.magnitude_sigmas > 0.0 && self.magnitude_sigmas.is_finite()) {
            return Err(Error::validation("fault magnitude_sigmas must be positive"));
        }
        Ok(())
    }
}

/// Linear drift of `drift_per_tick * (tick - start_tick)` from `start_tick` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub machine: MachineId,
    pub metric: Metric,
    pub start_tick: u64,
    pub drift_per_tick: f64,
}

impl DegradationSpec {
    pub fn offset(&self, tick: u64) -> f64 {
        if tick >= self.start_tick {
            self.drift_per_tick * (tick - self.start_tick) as f64
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub ticks: u64,
    pub time_base: TimeBase,
    pub profiles: Vec<MachineProfile>,
    pub faults: Vec<FaultSpec>,
    pub degradations: Vec<DegradationSpec>,
    pub diurnal_amplitude: f64,
}

impl SimConfig {
    /// Default profiles, no faults, no drift, flat diurnal curve.
    pub fn new(seed: u64, ticks: u64) -> Self {
        Self {
            seed,
            ticks,
            time_base: TimeBase::default(),
            profiles: default_profiles(),
            faults: Vec::new(),
            degradations: Vec::new(),
            diurnal_amplitude: 0.0,
        }
    }

    pub fn profile(&self, machine: MachineId) -> Option<&MachineProfile> {
        self.profiles.iter().find(|p| p.machine == machine)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.diurnal_amplitude) {
            return Err(Error::validation("diurnal_amplitude must be a fraction in [0, 1]"));
        }
        if self.time_base.tick_ms == 0 {
            return Err(Error::validation("tick_ms must be positive"));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        for f in &self.faults {
            f.validate()?;
            let profile = self
                .profile(f.machine)
                .ok_or_else(|| Error::UnknownMachine(f.machine.to_string()))?;
            if !profile.metrics.contains_key(&f.metric) {
                return Err(Error::validation(format!(
                    "fault on {} {}: metric not simulated for this machine",
                    f.machine, f.metric
                )));
            }
        }
        faults::check_overlaps(&self.faults)?;
        for d in &self.degradations {
            let profile = self
                .profile(d.machine)
                .ok_or_else(|| Error::UnknownMachine(d.machine.to_string()))?;
            let (Some(base), Some(threshold)) = (profile.baseline(d.metric), profile.threshold(d.metric)) else {
                return Err(Error::validation(format!(
                    "degradation on {} {}: metric needs a baseline and a failure threshold",
                    d.machine, d.metric
                )));
            };
            let toward = (threshold - base).signum();
            if d.drift_per_tick == 0.0 || d.drift_per_tick.signum() != toward {
                return Err(Error::validation(format!(
                    "degradation on {} {}: drift must move toward the threshold {threshold}",
                    d.machine, d.metric
                )));
            }
        }
        Ok(())
    }

    /// Parse a simulation config. A `profiles` path is resolved relative to
    /// `base_dir`; without one the built-in table is used.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: SimConfigFile = toml::from_str(text).map_err(Error::from_toml)?;
        if file.version != SIM_CONFIG_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: SIM_CONFIG_VERSION,
            });
        }
        let profiles = match &file.profiles {
            Some(rel) => {
                let path = base_dir.map_or_else(|| Path::new(rel).to_path_buf(), |d| d.join(rel));
                parse_profiles(&std::fs::read_to_string(&path)?)?
            }
            None => default_profiles(),
        };
        let config = SimConfig {
            seed: file.seed,
            ticks: file.ticks,
            time_base: TimeBase::new(
                file.epoch_ms.unwrap_or(TimeBase::DEFAULT_EPOCH_MS),
                file.tick_ms.unwrap_or(1000),
            ),
            profiles,
            faults: file.fault,
            degradations: file.degradation,
            diurnal_amplitude: file.diurnal_amplitude,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimConfigFile {
    version: u32,
    seed: u64,
    ticks: u64,
    tick_ms: Option<u64>,
    epoch_ms: Option<i64>,
    #[serde(default)]
    diurnal_amplitude: f64,
    profiles: Option<String>,
    #[serde(default)]
    fault: Vec<FaultSpec>,
    #[serde(default)]
    degradation: Vec<DegradationSpec>,
}

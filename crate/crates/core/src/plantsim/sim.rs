use std::f64::consts::PI;

use super::{MachineProfile, SimConfig};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, SplitMix64};
use crate::types::SensorReading;

/// Simulator position: next tick to emit plus one noise substream per profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub tick: u64,
    rngs: Vec<SplitMix64>,
}

impl SimState {
    pub fn initial(config: &SimConfig) -> Self {
        let rngs = config
            .profiles
            .iter()
            .map(|p| SplitMix64::new(config.seed ^ fnv1a64(p.machine.name())))
            .collect();
        Self { tick: 0, rngs }
    }
}

fn diurnal_factor(config: &SimConfig, tick: u64) -> f64 {
    let tick_s = config.time_base.tick_ms as f64 / 1000.0;
    1.0 + config.diurnal_amplitude * (2.0 * PI * tick as f64 * tick_s / 86_400.0).sin()
}

fn machine_reading(
    config: &SimConfig,
    profile: &MachineProfile,
    rng: &mut SplitMix64,
    tick: u64,
    diurnal: f64,
) -> SensorReading {
    let mut reading = SensorReading::new(profile.machine, tick, config.time_base.timestamp(tick));
    for (&metric, p) in &profile.metrics {
        let drift: f64 = config
            .degradations
            .iter()
            .filter(|d| d.machine == profile.machine && d.metric == metric)
            .map(|d| d.offset(tick))
            .sum();
        let spike: f64 = config
            .faults
            .iter()
            .filter(|f| f.machine == profile.machine && f.metric == metric && f.is_active(tick))
            .map(|f| f.magnitude_sigmas * p.sigma)
            .sum();
        let noise = p.sigma * rng.next_gaussian();
        reading
            .values
            .insert(metric, p.baseline * diurnal + drift + spike + noise);
    }
    reading
}

/// Emit one reading per configured machine for `state.tick`.
pub fn step(state: &SimState, config: &SimConfig) -> Result<(SimState, Vec<SensorReading>)> {
    if state.tick >= config.ticks {
        return Err(Error::Exhausted { ticks: config.ticks });
    }
    let mut next = state.clone();
    let diurnal = diurnal_factor(config, state.tick);
    let readings = config
        .profiles
        .iter()
        .zip(next.rngs.iter_mut())
        .map(|(profile, rng)| machine_reading(config, profile, rng, state.tick, diurnal))
        .collect();
    next.tick += 1;
    Ok((next, readings))
}

/// Owning wrapper that steps in place; iterates tick batches.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    state: SimState,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let state = SimState::initial(&config);
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.state.tick
    }

    pub fn step(&mut self) -> Result<Vec<SensorReading>> {
        let (next, readings) = step(&self.state, &self.config)?;
        self.state = next;
        Ok(readings)
    }
}

impl Iterator for Simulator {
    type Item = Vec<SensorReading>;

    fn next(&mut self) -> Option<Self::Item> {
        Simulator::step(self).ok()
    }
}

/// Run the whole configuration; readings are tick-major, registry order within a tick.
pub fn run(config: &SimConfig) -> Result<Vec<SensorReading>> {
    let sim = Simulator::new(config.clone())?;
    Ok(sim.flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::{DegradationSpec, FaultSpec};
    use crate::types::{MachineId, Metric};

    fn quiet_config(ticks: u64) -> SimConfig {
        let mut config = SimConfig::new(42, ticks);
        for p in &mut config.profiles {
            for m in p.metrics.values_mut() {
                m.sigma = 0.0;
            }
        }
        config
    }

    #[test]
    fn noiseless_equals_baseline() {
        let config = quiet_config(5);
        for r in run(&config).unwrap() {
            let profile = config.profile(r.machine).unwrap();
            for (m, v) in &r.values {
                assert_eq!(*v, profile.baseline(*m).unwrap());
            }
        }
    }

    #[test]
    fn six_machines_per_tick() {
        let config = SimConfig::new(42, 1);
        let (_, readings) = step(&SimState::initial(&config), &config).unwrap();
        let names: Vec<&str> = readings.iter().map(|r| r.machine.name()).collect();
        assert_eq!(
            names,
            vec![
                "Coating Machine",
                "Electrolyte Filling Machine",
                "Formation Equipment",
                "Aging Chamber",
                "Sealing Machine",
                "AGV"
            ]
        );
    }

    #[test]
    fn exhausted_after_ticks() {
        let config = SimConfig::new(1, 2);
        let mut state = SimState::initial(&config);
        for _ in 0..2 {
            state = step(&state, &config).unwrap().0;
        }
        assert!(matches!(step(&state, &config), Err(Error::Exhausted { ticks: 2 })));
    }

    #[test]
    fn deterministic_under_seed() {
        let config = SimConfig::new(9, 50);
        assert_eq!(run(&config).unwrap(), run(&config).unwrap());
        let other = SimConfig::new(10, 50);
        assert_ne!(run(&config).unwrap(), run(&other).unwrap());
    }

    #[test]
    fn superposition_without_noise() {
        let mut config = quiet_config(400);
        config.time_base.tick_ms = 3_600_000;
        config.diurnal_amplitude = 0.25;
        config.degradations.push(DegradationSpec {
            machine: MachineId::SealingMachine,
            metric: Metric::Temperature,
            start_tick: 50,
            drift_per_tick: 0.05,
        });
        for r in run(&config).unwrap() {
            if r.machine != MachineId::SealingMachine {
                continue;
            }
            let t = r.tick as f64;
            let diurnal = 180.0 * (1.0 + 0.25 * (2.0 * PI * t * 3600.0 / 86_400.0).sin());
            let drift = if r.tick >= 50 { 0.05 * (t - 50.0) } else { 0.0 };
            assert_eq!(r.values[&Metric::Temperature], diurnal + drift + 0.0 + 0.0);
        }
    }

    #[test]
    fn configured_spike_adds_magnitude_times_sigma() {
        let clean = SimConfig::new(5, 200);
        let mut faulted = clean.clone();
        faulted.faults.push(FaultSpec {
            machine: MachineId::SealingMachine,
            metric: Metric::Temperature,
            start_tick: 100,
            duration: 5,
            magnitude_sigmas: 6.0,
        });
        let a = run(&clean).unwrap();
        let b = run(&faulted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let active = x.machine == MachineId::SealingMachine && (100..105).contains(&x.tick);
            for (m, v) in &x.values {
                let diff = y.values[m] - v;
                if active && *m == Metric::Temperature {
                    assert!((diff - 6.0).abs() < 1e-9, "tick {} diff {diff}", x.tick);
                } else {
                    assert_eq!(diff, 0.0);
                }
            }
        }
    }
}

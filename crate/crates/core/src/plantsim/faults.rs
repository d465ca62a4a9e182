use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FaultSpec, MachineProfile};
use crate::error::{Error, Result};
use crate::types::{MachineId, Metric, SensorReading};

/// Ground-truth interval `[start_tick, end_tick)` of an injected fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInterval {
    pub machine: MachineId,
    pub metric: Metric,
    pub start_tick: u64,
    pub end_tick: u64,
}

impl FaultInterval {
    pub fn contains(&self, tick: u64) -> bool {
        (self.start_tick..self.end_tick).contains(&tick)
    }
}

impl From<&FaultSpec> for FaultInterval {
    fn from(f: &FaultSpec) -> Self {
        Self {
            machine: f.machine,
            metric: f.metric,
            start_tick: f.start_tick,
            end_tick: f.end_tick(),
        }
    }
}

pub(super) fn check_overlaps(faults: &[FaultSpec]) -> Result<()> {
    let mut by_key: BTreeMap<(MachineId, Metric), Vec<&FaultSpec>> = BTreeMap::new();
    for f in faults {
        by_key.entry((f.machine, f.metric)).or_default().push(f);
    }
    for ((machine, metric), mut list) in by_key {
        list.sort_by_key(|f| f.start_tick);
        for pair in list.windows(2) {
            if pair[1].start_tick < pair[0].end_tick() {
                return Err(Error::validation(format!(
                    "overlapping faults on {machine} {metric} at ticks {} and {}",
                    pair[0].start_tick, pair[1].start_tick
                )));
            }
        }
    }
    Ok(())
}

/// Add `magnitude_sigmas * sigma` to the faulted metric inside each fault
/// window. Readings outside every window are returned unchanged.
pub fn inject_faults(
    stream: &[SensorReading],
    faults: &[FaultSpec],
    profiles: &[MachineProfile],
) -> Result<(Vec<SensorReading>, Vec<FaultInterval>)> {
    check_overlaps(faults)?;
    let mut spans: BTreeMap<MachineId, (u64, u64)> = BTreeMap::new();
    for r in stream {
        let span = spans.entry(r.machine).or_insert((r.tick, r.tick));
        span.0 = span.0.min(r.tick);
        span.1 = span.1.max(r.tick);
    }
    let mut sigmas = Vec::with_capacity(faults.len());
    for f in faults {
        f.validate()?;
        let Some(&(first, last)) = spans.get(&f.machine) else {
            return Err(Error::validation(format!(
                "fault on {}: machine not in stream",
                f.machine
            )));
        };
        if f.start_tick < first || f.end_tick() - 1 > last {
            return Err(Error::validation(format!(
                "fault on {} {} [{}, {}) outside stream range [{first}, {last}]",
                f.machine,
                f.metric,
                f.start_tick,
                f.end_tick()
            )));
        }
        let sigma = profiles
            .iter()
            .find(|p| p.machine == f.machine)
            .and_then(|p| p.sigma(f.metric))
            .ok_or_else(|| Error::validation(format!("no profile sigma for {} {}", f.machine, f.metric)))?;
        sigmas.push(sigma);
    }

    let mut out = stream.to_vec();
    for r in &mut out {
        for (f, sigma) in faults.iter().zip(&sigmas) {
            if f.machine == r.machine && f.is_active(r.tick) {
                let value = r.values.get_mut(&f.metric).ok_or_else(|| {
                    Error::validation(format!(
                        "{} tick {} has no {} value to fault",
                        r.machine, r.tick, f.metric
                    ))
                })?;
                *value += f.magnitude_sigmas * sigma;
            }
        }
    }
    Ok((out, faults.iter().map(FaultInterval::from).collect()))
}

/// `count` evenly spaced, non-overlapping spikes over `[first_tick, first_tick + span)`.
///
/// Spikes rotate through `machines` and, independently, through
/// Temperature, VibrationLevel and PowerLoad.
pub fn spike_schedule(
    machines: &[MachineId],
    first_tick: u64,
    span: u64,
    count: usize,
    duration: u64,
    magnitude_sigmas: f64,
) -> Vec<FaultSpec> {
    const METRICS: [Metric; 3] = [Metric::Temperature, Metric::VibrationLevel, Metric::PowerLoad];
    if count == 0 || machines.is_empty() {
        return Vec::new();
    }
    let spacing = span / count as u64;
    (0..count)
        .map(|i| FaultSpec {
            machine: machines[i % machines.len()],
            metric: METRICS[(i / machines.len()) % METRICS.len()],
            start_tick: first_tick + i as u64 * spacing + spacing / 2,
            duration,
            magnitude_sigmas,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::{default_profiles, run, SimConfig};

    #[test]
    fn zero_faults_is_identity() {
        let stream = run(&SimConfig::new(3, 20)).unwrap();
        let (out, truth) = inject_faults(&stream, &[], &default_profiles()).unwrap();
        assert_eq!(out, stream);
        assert!(truth.is_empty());
    }

    #[test]
    fn six_sigma_spike_is_exact_offset() {
        let profiles = default_profiles();
        let stream = run(&SimConfig::new(3, 50)).unwrap();
        let fault = FaultSpec {
            machine: MachineId::AgingChamber,
            metric: Metric::Temperature,
            start_tick: 10,
            duration: 5,
            magnitude_sigmas: 6.0,
        };
        let sigma = profiles[3].sigma(Metric::Temperature).unwrap();
        let (out, truth) = inject_faults(&stream, &[fault], &profiles).unwrap();
        assert_eq!(truth.len(), 1);
        let mut hits = 0;
        for (a, b) in stream.iter().zip(&out) {
            if a.machine == MachineId::AgingChamber && (10..15).contains(&a.tick) {
                hits += 1;
                assert_eq!(
                    b.values[&Metric::Temperature],
                    a.values[&Metric::Temperature] + 6.0 * sigma
                );
            } else {
                assert_eq!(a, b);
            }
        }
        assert_eq!(hits, 5);
    }

    #[test]
    fn overlapping_faults_rejected() {
        let stream = run(&SimConfig::new(3, 50)).unwrap();
        let f = FaultSpec {
            machine: MachineId::Agv,
            metric: Metric::Temperature,
            start_tick: 10,
            duration: 5,
            magnitude_sigmas: 6.0,
        };
        let g = FaultSpec { start_tick: 14, ..f };
        assert!(inject_faults(&stream, &[f, g], &default_profiles()).is_err());
        let h = FaultSpec { start_tick: 15, ..f };
        assert!(inject_faults(&stream, &[f, h], &default_profiles()).is_ok());
    }

    #[test]
    fn fault_outside_stream_rejected() {
        let stream = run(&SimConfig::new(3, 20)).unwrap();
        let f = FaultSpec {
            machine: MachineId::Agv,
            metric: Metric::Temperature,
            start_tick: 18,
            duration: 5,
            magnitude_sigmas: 6.0,
        };
        assert!(inject_faults(&stream, &[f], &default_profiles()).is_err());
    }

    #[test]
    fn fifty_spikes_fifty_intervals() {
        let faults = spike_schedule(&MachineId::ALL, 0, 10_000, 50, 5, 6.0);
        let config = SimConfig::new(11, 10_000);
        let stream = run(&config).unwrap();
        let (_, truth) = inject_faults(&stream, &faults, &config.profiles).unwrap();
        assert_eq!(truth.len(), 50);
        check_overlaps(&faults).unwrap();
    }
}

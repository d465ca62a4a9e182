use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{run, shared_metrics, SimConfig};
use crate::error::{Error, Result};
use crate::types::{MachineId, Metric, SensorReading};

/// First tick at which a degraded metric reached its failure threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub machine: MachineId,
    pub metric: Metric,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub machine: MachineId,
    pub tick: u64,
    pub values: Vec<f64>,
}

/// Per-tick raw metric rows with failure-horizon labels.
///
/// A machine's row at tick `t` is labelled 1 when its earliest threshold
/// crossing `c` satisfies `t < c <= t + horizon`. Rows at or after `c` are
/// dropped: the machine is down from that point on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub feature_names: Vec<Metric>,
    pub horizon: u64,
    pub rows: Vec<LabeledRow>,
    pub labels: Vec<u8>,
    pub crossings: Vec<Crossing>,
    /// Set when the dataset has no positive class.
    pub warning: Option<String>,
}

impl LabeledDataset {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Rows and labels for one machine, in tick order.
    pub fn machine_rows(&self, machine: MachineId) -> impl Iterator<Item = (&LabeledRow, u8)> {
        self.rows
            .iter()
            .zip(self.labels.iter().copied())
            .filter(move |(r, _)| r.machine == machine)
    }
}

fn find_crossings(config: &SimConfig, stream: &[SensorReading]) -> Vec<Crossing> {
    let mut crossings = Vec::new();
    for d in &config.degradations {
        let profile = config.profile(d.machine).expect("validated config");
        let threshold = profile.threshold(d.metric).expect("validated config");
        let rising = d.drift_per_tick > 0.0;
        let hit = stream.iter().find(|r| {
            r.machine == d.machine
                && r.tick >= d.start_tick
                && r.get(d.metric)
                    .is_some_and(|v| if rising { v >= threshold } else { v <= threshold })
        });
        if let Some(r) = hit {
            crossings.push(Crossing {
                machine: d.machine,
                metric: d.metric,
                tick: r.tick,
            });
        }
    }
    crossings.sort_by_key(|c| (c.tick, c.machine));
    crossings
}

pub fn generate_labeled_dataset(config: &SimConfig, horizon: u64) -> Result<LabeledDataset> {
    if horizon < 1 {
        return Err(Error::validation("label horizon must be at least 1 tick"));
    }
    let stream = run(config)?;
    let crossings = find_crossings(config, &stream);
    let mut failure_tick: BTreeMap<MachineId, u64> = BTreeMap::new();
    for c in &crossings {
        failure_tick
            .entry(c.machine)
            .and_modify(|t| *t = (*t).min(c.tick))
            .or_insert(c.tick);
    }

    let feature_names = shared_metrics(&config.profiles);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for r in &stream {
        let fail = failure_tick.get(&r.machine).copied();
        if fail.is_some_and(|c| r.tick >= c) {
            continue;
        }
        let label = fail.is_some_and(|c| c <= r.tick + horizon);
        rows.push(LabeledRow {
            machine: r.machine,
            tick: r.tick,
            values: feature_names
                .iter()
                .map(|m| r.get(*m).expect("shared metric present"))
                .collect(),
        });
        labels.push(label as u8);
    }

    let warning = if config.degradations.is_empty() {
        Some("no degradation configured: dataset has no positive class".to_string())
    } else if !labels.contains(&1) {
        Some("no threshold crossing occurred: dataset has no positive class".to_string())
    } else {
        None
    };
    Ok(LabeledDataset {
        feature_names,
        horizon,
        rows,
        labels,
        crossings,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::DegradationSpec;

    /// Noise-free Formation Equipment vibration drift crossing exactly at tick 100.
    fn crossing_at_100() -> SimConfig {
        let mut config = SimConfig::new(1, 150);
        for p in &mut config.profiles {
            for m in p.metrics.values_mut() {
                m.sigma = 0.0;
            }
        }
        // baseline 1.0, threshold 3.0: 2.0 / 0.04 = 50 ticks after start at 50
        config.degradations.push(DegradationSpec {
            machine: MachineId::FormationEquipment,
            metric: Metric::VibrationLevel,
            start_tick: 50,
            drift_per_tick: 0.04,
        });
        config
    }

    #[test]
    fn horizon_labels_preceding_ticks() {
        let ds = generate_labeled_dataset(&crossing_at_100(), 20).unwrap();
        assert_eq!(ds.crossings.len(), 1);
        assert_eq!(ds.crossings[0].tick, 100);
        let positives: Vec<u64> = ds
            .machine_rows(MachineId::FormationEquipment)
            .filter(|(_, l)| *l == 1)
            .map(|(r, _)| r.tick)
            .collect();
        assert_eq!(positives, (80..100).collect::<Vec<_>>());
        assert!(ds
            .machine_rows(MachineId::FormationEquipment)
            .all(|(r, _)| r.tick < 100));
        assert!(ds
            .rows
            .iter()
            .zip(&ds.labels)
            .filter(|(r, _)| r.machine != MachineId::FormationEquipment)
            .all(|(_, &l)| l == 0));
        assert!(ds.warning.is_none());
    }

    #[test]
    fn zero_horizon_rejected() {
        assert!(matches!(
            generate_labeled_dataset(&crossing_at_100(), 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn no_degradation_warns() {
        let ds = generate_labeled_dataset(&SimConfig::new(1, 10), 5).unwrap();
        assert_eq!(ds.positives(), 0);
        assert!(ds.warning.is_some());
    }
}

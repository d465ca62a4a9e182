//! Domain vocabulary: machines, metrics and sensor readings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A machine on the battery line. Only canonical names are representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MachineId {
    CoatingMachine,
    ElectrolyteFillingMachine,
    FormationEquipment,
    AgingChamber,
    SealingMachine,
    Agv,
}

impl MachineId {
    /// Registry order.
    pub const ALL: [MachineId; 6] = [
        MachineId::CoatingMachine,
        MachineId::ElectrolyteFillingMachine,
        MachineId::FormationEquipment,
        MachineId::AgingChamber,
        MachineId::SealingMachine,
        MachineId::Agv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MachineId::CoatingMachine => "Coating Machine",
            MachineId::ElectrolyteFillingMachine => "Electrolyte Filling Machine",
            MachineId::FormationEquipment => "Formation Equipment",
            MachineId::AgingChamber => "Aging Chamber",
            MachineId::SealingMachine => "Sealing Machine",
            MachineId::Agv => "AGV",
        }
    }
}

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MachineId {
    type Err = Error;

    /// Exact match on the canonical name.
    fn from_str(s: &str) -> Result<Self> {
        MachineId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMachine(s.to_string()))
    }
}

impl Serialize for MachineId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MachineId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Measured quantity. Serialized with its identifier (`"VibrationLevel"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Temperature,
    Pressure,
    VibrationLevel,
    MachineLoad,
    PowerLoad,
    GridUsage,
    BatteryCapacity,
    #[serde(rename = "AGVLoad")]
    AgvLoad,
    MixingSpeed,
    CoatingThickness,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::Temperature,
        Metric::Pressure,
        Metric::VibrationLevel,
        Metric::MachineLoad,
        Metric::PowerLoad,
        Metric::GridUsage,
        Metric::BatteryCapacity,
        Metric::AgvLoad,
        Metric::MixingSpeed,
        Metric::CoatingThickness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Temperature => "Temperature",
            Metric::Pressure => "Pressure",
            Metric::VibrationLevel => "VibrationLevel",
            Metric::MachineLoad => "MachineLoad",
            Metric::PowerLoad => "PowerLoad",
            Metric::GridUsage => "GridUsage",
            Metric::BatteryCapacity => "BatteryCapacity",
            Metric::AgvLoad => "AGVLoad",
            Metric::MixingSpeed => "MixingSpeed",
            Metric::CoatingThickness => "CoatingThickness",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Metric::Temperature => "°C",
            Metric::Pressure => "kPa",
            Metric::VibrationLevel => "mm/s",
            Metric::MachineLoad | Metric::BatteryCapacity | Metric::AgvLoad => "",
            Metric::PowerLoad | Metric::GridUsage => "kW",
            Metric::MixingSpeed => "rpm",
            Metric::CoatingThickness => "µm",
        }
    }

    /// Plausible operating range; profile baselines must fall inside it.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Temperature => (-40.0, 400.0),
            Metric::Pressure => (0.0, 1000.0),
            Metric::VibrationLevel => (0.0, 100.0),
            Metric::MachineLoad | Metric::AgvLoad => (0.0, 1.5),
            Metric::BatteryCapacity => (0.0, 1.0),
            Metric::PowerLoad | Metric::GridUsage => (0.0, 10_000.0),
            Metric::MixingSpeed => (0.0, 10_000.0),
            Metric::CoatingThickness => (0.0, 1000.0),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown metric {s:?}")))
    }
}

/// Mapping between simulation ticks and wall-clock milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBase {
    pub epoch_ms: i64,
    pub tick_ms: u64,
}

impl TimeBase {
    /// 2024-09-11T00:00:00Z.
    pub const DEFAULT_EPOCH_MS: i64 = 1_726_012_800_000;

    pub fn new(epoch_ms: i64, tick_ms: u64) -> Self {
        Self { epoch_ms, tick_ms }
    }

    pub fn timestamp(&self, tick: u64) -> i64 {
        self.epoch_ms + (tick * self.tick_ms) as i64
    }

    pub fn tick_hours(&self) -> f64 {
        self.tick_ms as f64 / 3_600_000.0
    }

    /// Number of whole ticks covering `seconds`, at least one.
    pub fn ticks_for_seconds(&self, seconds: u64) -> u64 {
        ((seconds * 1000).div_ceil(self.tick_ms)).max(1)
    }
}

impl Default for TimeBase {
    fn default() -> Self {
        Self::new(Self::DEFAULT_EPOCH_MS, 1000)
    }
}

/// One timestamped multivariate measurement from one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub machine: MachineId,
    pub tick: u64,
    pub timestamp: i64,
    pub values: BTreeMap<Metric, f64>,
}

impl SensorReading {
    pub fn new(machine: MachineId, tick: u64, timestamp: i64) -> Self {
        Self {
            machine,
            tick,
            timestamp,
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, metric: Metric, value: f64) -> Self {
        self.values.insert(metric, value);
        self
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values.get(&metric).copied()
    }

    pub fn validate(&self) -> Result<()> {
        for (metric, value) in &self.values {
            if !value.is_finite() {
                return Err(Error::validation(format!(
                    "{} tick {}: {} is not finite ({value})",
                    self.machine, self.tick, metric
                )));
            }
        }
        Ok(())
    }
}

/// The set of machines a store accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineRegistry {
    machines: Vec<MachineId>,
}

impl MachineRegistry {
    pub fn new(machines: impl IntoIterator<Item = MachineId>) -> Self {
        let mut machines: Vec<MachineId> = machines.into_iter().collect();
        machines.sort();
        machines.dedup();
        Self { machines }
    }

    pub fn contains(&self, machine: MachineId) -> bool {
        self.machines.contains(&machine)
    }

    pub fn machines(&self) -> &[MachineId] {
        &self.machines
    }

    /// Resolve a name against the registry; exact canonical match only.
    pub fn resolve(&self, name: &str) -> Result<MachineId> {
        let machine: MachineId = name.parse()?;
        if self.contains(machine) {
            Ok(machine)
        } else {
            Err(Error::UnknownMachine(name.to_string()))
        }
    }
}

impl Default for MachineRegistry {
    fn default() -> Self {
        Self::new(MachineId::ALL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_names_round_trip() {
        for m in MachineId::ALL {
            assert_eq!(m.name().parse::<MachineId>().unwrap(), m);
        }
        assert!("aging chamber".parse::<MachineId>().is_err());
    }

    #[test]
    fn metric_serde_names() {
        let json = serde_json::to_string(&Metric::AgvLoad).unwrap();
        assert_eq!(json, "\"AGVLoad\"");
        for m in Metric::ALL {
            let s = serde_json::to_string(&m).unwrap();
            assert_eq!(s, format!("\"{}\"", m.name()));
        }
    }

    #[test]
    fn nan_rejected() {
        let r = SensorReading::new(MachineId::Agv, 0, 0).with(Metric::Temperature, f64::NAN);
        assert!(matches!(r.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn registry_rejects_unregistered() {
        let reg = MachineRegistry::new([MachineId::Agv]);
        assert!(reg.resolve("AGV").is_ok());
        assert!(matches!(reg.resolve("Sealing Machine"), Err(Error::UnknownMachine(_))));
    }

    #[test]
    fn timebase_ticks() {
        let tb = TimeBase::default();
        assert_eq!(tb.timestamp(3), TimeBase::DEFAULT_EPOCH_MS + 3000);
        assert_eq!(tb.ticks_for_seconds(3600), 3600);
        let hourly = TimeBase::new(0, 3_600_000);
        assert_eq!(hourly.ticks_for_seconds(3600), 1);
        assert_eq!(hourly.tick_hours(), 1.0);
    }
}

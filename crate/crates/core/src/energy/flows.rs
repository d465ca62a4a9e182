use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MachineId, Metric, SensorReading, TimeBase};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum FlowNode {
    Grid,
    Battery,
    Machine(MachineId),
    Process(String),
}

impl fmt::Display for FlowNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowNode::Grid => f.write_str("Grid"),
            FlowNode::Battery => f.write_str("Battery"),
            FlowNode::Machine(m) => write!(f, "{m}"),
            FlowNode::Process(p) => f.write_str(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub source: FlowNode,
    pub target: FlowNode,
    pub energy_kwh: f64,
}

/// Energy flow over a window of readings.
///
/// Per tick, plant demand D (PowerLoad) is met by the grid up to the plant's
/// GridUsage G and by the battery for the rest, `max(0, D - G)`. Both
/// sources are split across machines in proportion to demand. Each machine
/// then feeds its process stage. Zero-energy edges are omitted.
pub fn flow_aggregate(
    readings: &[SensorReading],
    processes: &BTreeMap<MachineId, String>,
    time_base: TimeBase,
) -> Result<Vec<FlowEdge>> {
    if readings.is_empty() {
        return Err(Error::validation("flow window is empty"));
    }
    let hours = time_base.tick_hours();
    let mut ticks: BTreeMap<u64, Vec<(MachineId, f64, f64)>> = BTreeMap::new();
    for r in readings {
        let demand = r
            .get(Metric::PowerLoad)
            .ok_or_else(|| Error::validation(format!("{} tick {}: no PowerLoad", r.machine, r.tick)))?;
        let grid = r.get(Metric::GridUsage).unwrap_or(0.0);
        if demand < 0.0 || grid < 0.0 {
            return Err(Error::validation(format!(
                "{} tick {}: negative energy value",
                r.machine, r.tick
            )));
        }
        if !processes.contains_key(&r.machine) {
            return Err(Error::validation(format!("{} has no process stage", r.machine)));
        }
        ticks
            .entry(r.tick)
            .or_default()
            .push((r.machine, demand * hours, grid * hours));
    }

    let mut from_grid: BTreeMap<MachineId, f64> = BTreeMap::new();
    let mut from_battery: BTreeMap<MachineId, f64> = BTreeMap::new();
    for machines in ticks.values() {
        let demand: f64 = machines.iter().map(|m| m.1).sum();
        if demand == 0.0 {
            continue;
        }
        let supply: f64 = machines.iter().map(|m| m.2).sum();
        let battery = (demand - supply).max(0.0);
        let grid = demand - battery;
        for &(machine, d, _) in machines {
            let share = d / demand;
            *from_grid.entry(machine).or_default() += grid * share;
            *from_battery.entry(machine).or_default() += battery * share;
        }
    }

    let mut edges = Vec::new();
    let mut push = |source: FlowNode, target: FlowNode, energy_kwh: f64| {
        if energy_kwh > 0.0 {
            edges.push(FlowEdge {
                source,
                target,
                energy_kwh,
            });
        }
    };
    for (machine, kwh) in &from_grid {
        push(FlowNode::Grid, FlowNode::Machine(*machine), *kwh);
    }
    for (machine, kwh) in &from_battery {
        push(FlowNode::Battery, FlowNode::Machine(*machine), *kwh);
    }
    for machine in from_grid.keys() {
        let total = from_grid[machine] + from_battery[machine];
        push(
            FlowNode::Machine(*machine),
            FlowNode::Process(processes[machine].clone()),
            total,
        );
    }
    Ok(edges)
}

/// Energy leaving the sources.
pub fn plant_total_kwh(edges: &[FlowEdge]) -> f64 {
    edges
        .iter()
        .filter(|e| matches!(e.source, FlowNode::Grid | FlowNode::Battery))
        .map(|e| e.energy_kwh)
        .sum()
}

/// Every node with both inflow and outflow must balance within `rel_tol`.
pub fn check_conservation(edges: &[FlowEdge], rel_tol: f64) -> Result<()> {
    let mut inflow: BTreeMap<&FlowNode, f64> = BTreeMap::new();
    let mut outflow: BTreeMap<&FlowNode, f64> = BTreeMap::new();
    for e in edges {
        *outflow.entry(&e.source).or_default() += e.energy_kwh;
        *inflow.entry(&e.target).or_default() += e.energy_kwh;
    }
    for (node, inn) in &inflow {
        if let Some(out) = outflow.get(node) {
            if (inn - out).abs() > rel_tol * inn.abs().max(out.abs()) {
                return Err(Error::validation(format!("{node}: inflow {inn} != outflow {out}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(machine: MachineId, tick: u64, power: f64, grid: f64) -> SensorReading {
        SensorReading::new(machine, tick, 0)
            .with(Metric::PowerLoad, power)
            .with(Metric::GridUsage, grid)
    }

    fn hourly() -> TimeBase {
        TimeBase::new(0, 3_600_000)
    }

    fn processes() -> BTreeMap<MachineId, String> {
        MachineId::ALL.iter().map(|m| (*m, format!("{m} stage"))).collect()
    }

    #[test]
    fn grid_split_sixty_forty() {
        let readings = [
            reading(MachineId::CoatingMachine, 0, 60.0, 60.0),
            reading(MachineId::SealingMachine, 0, 40.0, 40.0),
        ];
        let edges = flow_aggregate(&readings, &processes(), hourly()).unwrap();
        let grid_out: f64 = edges
            .iter()
            .filter(|e| e.source == FlowNode::Grid)
            .map(|e| e.energy_kwh)
            .sum();
        assert_eq!(grid_out, 100.0);
        assert_eq!(edges.len(), 4);
        check_conservation(&edges, 1e-9).unwrap();
    }

    #[test]
    fn single_chain() {
        let edges = flow_aggregate(&[reading(MachineId::Agv, 0, 5.0, 5.0)], &processes(), hourly()).unwrap();
        assert_eq!(edges.len(), 2);
        assert_eq!(edges[0].energy_kwh, edges[1].energy_kwh);
        assert_eq!(edges[1].target, FlowNode::Process("AGV stage".into()));
    }

    #[test]
    fn battery_covers_shortfall() {
        let edges = flow_aggregate(&[reading(MachineId::Agv, 0, 10.0, 7.0)], &processes(), hourly()).unwrap();
        let battery: f64 = edges
            .iter()
            .filter(|e| e.source == FlowNode::Battery)
            .map(|e| e.energy_kwh)
            .sum();
        assert!((battery - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_and_empty() {
        assert!(flow_aggregate(&[], &processes(), hourly()).is_err());
        assert!(flow_aggregate(&[reading(MachineId::Agv, 0, -1.0, 0.0)], &processes(), hourly()).is_err());
    }

    #[test]
    fn node_serialization() {
        let json = serde_json::to_string(&FlowNode::Machine(MachineId::Agv)).unwrap();
        assert_eq!(json, r#"{"kind":"machine","name":"AGV"}"#);
        assert_eq!(serde_json::to_string(&FlowNode::Grid).unwrap(), r#"{"kind":"grid"}"#);
    }
}

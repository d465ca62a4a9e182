use super::EnergyFeatureRow;
use crate::error::{Error, Result};
use crate::isoforest::{self, detect_stream, AlertCategory, AnomalyAlert, IsoParams, IsolationModel, Observation};
use crate::types::MachineId;

/// Jump from the previous tick and offset from the lag-window mean. Both stay
/// stationary under slow load swings, so only abrupt changes stand out.
pub const ANOMALY_FEATURES: [&str; 2] = ["PowerLoad_step", "PowerLoad_vs_lag_mean"];

pub fn anomaly_features(row: &EnergyFeatureRow) -> Vec<f64> {
    let mean = row.lags.iter().sum::<f64>() / row.lags.len() as f64;
    vec![row.target - row.lags[0], row.target - mean]
}

pub fn energy_observations(machine: MachineId, rows: &[EnergyFeatureRow]) -> Vec<Observation> {
    rows.iter()
        .map(|r| Observation {
            machine,
            tick: r.tick,
            timestamp: r.timestamp,
            values: anomaly_features(r),
        })
        .collect()
}

pub fn fit_energy_detector(rows: &[EnergyFeatureRow], params: IsoParams, seed: u64) -> Result<IsolationModel> {
    let features: Vec<Vec<f64>> = rows.iter().map(anomaly_features).collect();
    isoforest::fit(&features, ANOMALY_FEATURES.map(String::from).to_vec(), params, seed)
}

/// Energy-tagged alerts for every flagged row.
pub fn detect_energy_anomalies(
    model: &IsolationModel,
    machine: MachineId,
    rows: &[EnergyFeatureRow],
) -> Result<Vec<AnomalyAlert>> {
    if model.feature_names != ANOMALY_FEATURES {
        return Err(Error::validation(format!(
            "model features {:?} are not the energy anomaly schema",
            model.feature_names
        )));
    }
    detect_stream(model, &energy_observations(machine, rows), AlertCategory::Energy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_from_lags() {
        let row = EnergyFeatureRow {
            tick: 3,
            timestamp: 0,
            lags: vec![4.0, 2.0],
            machine_load: 0.0,
            grid_usage: 0.0,
            battery_capacity: 0.0,
            hour: 0,
            target: 5.0,
        };
        assert_eq!(anomaly_features(&row), vec![1.0, 2.0]);
    }

    #[test]
    fn wrong_schema_rejected() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let model = isoforest::fit(&rows, vec!["x".into()], IsoParams::default(), 1).unwrap();
        assert!(detect_energy_anomalies(&model, MachineId::Agv, &[]).is_err());
    }
}

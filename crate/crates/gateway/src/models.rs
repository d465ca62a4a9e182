//! Model files used by the service and the default training recipes.

use std::path::Path;

use smartline_core::energy::{build_features_from, plant_samples, train_energy_model, EnergyModel, DEFAULT_LAGS};
use smartline_core::forest::Hyperparams;
use smartline_core::maintenance::{
    degradation_benchmark, train_risk_model, windowed_dataset, RiskModel, DEFAULT_HORIZON, DEFAULT_WINDOW,
};
use smartline_core::plantsim::{generate_labeled_dataset, run, SimConfig};
use smartline_core::{Error, MachineId, Result};

pub const TRAIN_FRACTION: f64 = 0.8;
/// Healthy ticks simulated for the default energy model.
pub const ENERGY_TRAIN_TICKS: u64 = 2000;

/// Everything the scheduler and handlers read. Swapped as a whole.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub risk: Option<RiskModel>,
    /// Keyed by target; `None` is the plant total.
    pub energy: Vec<(Option<MachineId>, EnergyModel)>,
}

impl Models {
    pub fn plant_energy(&self) -> Option<&EnergyModel> {
        self.energy.iter().find(|(m, _)| m.is_none()).map(|(_, e)| e)
    }
}

/// Risk model trained on the seeded degradation benchmark.
pub fn train_default_risk(seed: u64) -> Result<RiskModel> {
    let labeled = generate_labeled_dataset(&degradation_benchmark(seed), DEFAULT_HORIZON)?;
    let data = windowed_dataset(&labeled, DEFAULT_WINDOW)?;
    train_risk_model(&data, DEFAULT_WINDOW, TRAIN_FRACTION, Hyperparams::default(), seed)
}

/// Plant-total energy model trained on a healthy run that shares the live
/// simulation's profiles and time base.
pub fn train_default_energy(live: &SimConfig) -> Result<EnergyModel> {
    let mut config = live.clone();
    config.seed = live.seed.wrapping_add(1);
    config.ticks = ENERGY_TRAIN_TICKS;
    config.faults.clear();
    config.degradations.clear();
    let samples = plant_samples(&run(&config)?)?;
    let rows = build_features_from(&samples, DEFAULT_LAGS)?;
    train_energy_model(&rows, Hyperparams::default(), live.seed)
}

pub fn load_risk(path: &Path) -> Result<RiskModel> {
    RiskModel::from_json(&read(path)?)
}

pub fn load_energy(path: &Path) -> Result<EnergyModel> {
    EnergyModel::from_json(&read(path)?)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn save(path: &Path, json: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, json)?;
    Ok(())
}

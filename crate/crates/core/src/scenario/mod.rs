//! What-if projections for MixingSpeed, MachineLoad and CoatingThickness
//! changes. The response surface is a tunable heuristic loaded from config.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Metric, SensorReading};

pub const COEFFICIENTS_VERSION: u32 = 1;

const DEFAULT_COEFFICIENTS_TOML: &str = include_str!("../../config/scenario_coefficients.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputCoefficients {
    pub mixing_exponent: f64,
    pub load_exponent: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCoefficients {
    pub load_exponent: f64,
    pub mixing_exponent: f64,
    pub coating_quadratic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectCoefficients {
    pub coating_linear: f64,
    pub mixing_linear: f64,
    pub mixing_knee: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineCoefficients {
    pub units_per_load_hour: f64,
    pub defect_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub version: u32,
    pub bounds: Bounds,
    pub throughput: ThroughputCoefficients,
    pub energy: EnergyCoefficients,
    pub defects: DefectCoefficients,
    pub baseline: BaselineCoefficients,
}

impl Coefficients {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Coefficients = toml::from_str(text).map_err(Error::from_toml)?;
        if c.version != COEFFICIENTS_VERSION {
            return Err(Error::Version {
                found: c.version,
                expected: COEFFICIENTS_VERSION,
            });
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Rejects coefficient sets that would break the documented monotonicity.
    pub fn validate(&self) -> Result<()> {
        let b = self.bounds;
        if !(b.min_ratio > 0.0 && b.min_ratio <= 1.0 && b.max_ratio >= 1.0) {
            return Err(Error::Config(
                "bounds must satisfy 0 < min_ratio <= 1 <= max_ratio".into(),
            ));
        }
        let non_negative = [
            ("throughput.mixing_exponent", self.throughput.mixing_exponent),
            ("throughput.load_exponent", self.throughput.load_exponent),
            ("energy.mixing_exponent", self.energy.mixing_exponent),
            ("energy.coating_quadratic", self.energy.coating_quadratic),
            ("defects.coating_linear", self.defects.coating_linear),
            ("defects.mixing_linear", self.defects.mixing_linear),
            ("baseline.units_per_load_hour", self.baseline.units_per_load_hour),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.energy.load_exponent > 0.0 && self.energy.load_exponent.is_finite()) {
            return Err(Error::Config("energy.load_exponent must be positive".into()));
        }
        if !(self.throughput.cap >= 1.0 && self.throughput.cap.is_finite()) {
            return Err(Error::Config("throughput.cap must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline.defect_rate) {
            return Err(Error::Config("baseline.defect_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for Coefficients {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_COEFFICIENTS_TOML).expect("bundled coefficients are valid")
    }
}

/// Setpoints relative to nominal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub mixing_ratio: f64,
    pub load_ratio: f64,
    pub coating_ratio: f64,
}

impl ScenarioParams {
    pub const NOMINAL: ScenarioParams = ScenarioParams {
        mixing_ratio: 1.0,
        load_ratio: 1.0,
        coating_ratio: 1.0,
    };

    pub fn validate(&self, bounds: Bounds) -> Result<()> {
        for (name, v) in [
            ("mixing_ratio", self.mixing_ratio),
            ("load_ratio", self.load_ratio),
            ("coating_ratio", self.coating_ratio),
        ] {
            if !(bounds.min_ratio..=bounds.max_ratio).contains(&v) {
                return Err(Error::validation(format!(
                    "{name} = {v} outside [{}, {}]",
                    bounds.min_ratio, bounds.max_ratio
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    /// Units per hour.
    pub throughput: f64,
    pub energy_kw: f64,
    pub defect_rate: f64,
}

impl Baseline {
    fn validate(&self) -> Result<()> {
        if !(self.throughput > 0.0 && self.throughput.is_finite()) {
            return Err(Error::validation("baseline throughput must be positive"));
        }
        if !(self.energy_kw > 0.0 && self.energy_kw.is_finite()) {
            return Err(Error::validation("baseline energy must be positive"));
        }
        if !(0.0..=1.0).contains(&self.defect_rate) {
            return Err(Error::validation("baseline defect rate must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Baseline from recent readings: throughput from the mean MachineLoad,
/// energy from the mean plant PowerLoad per tick.
pub fn baseline_from_readings(readings: &[SensorReading], coefficients: &Coefficients) -> Result<Baseline> {
    let loads: Vec<f64> = readings.iter().filter_map(|r| r.get(Metric::MachineLoad)).collect();
    let ticks: BTreeSet<u64> = readings.iter().map(|r| r.tick).collect();
    let power: f64 = readings.iter().filter_map(|r| r.get(Metric::PowerLoad)).sum();
    if loads.is_empty() || ticks.is_empty() {
        return Err(Error::InsufficientData("no MachineLoad readings for a baseline".into()));
    }
    let baseline = Baseline {
        throughput: coefficients.baseline.units_per_load_hour * loads.iter().sum::<f64>() / loads.len() as f64,
        energy_kw: power / ticks.len() as f64,
        defect_rate: coefficients.baseline.defect_rate,
    };
    baseline.validate()?;
    Ok(baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProjection {
    pub params: ScenarioParams,
    pub throughput: f64,
    pub energy_kw: f64,
    pub defect_rate: f64,
    pub delta_throughput: f64,
    pub delta_energy_kw: f64,
    pub delta_defect_rate: f64,
}

impl ScenarioProjection {
    pub fn throughput_per_kw(&self) -> f64 {
        self.throughput / self.energy_kw
    }
}

pub fn simulate_scenario(
    params: ScenarioParams,
    baseline: Baseline,
    coefficients: &Coefficients,
) -> Result<ScenarioProjection> {
    params.validate(coefficients.bounds)?;
    baseline.validate()?;
    let (m, l, c) = (params.mixing_ratio, params.load_ratio, params.coating_ratio);
    let t = coefficients.throughput;
    let e = coefficients.energy;
    let d = coefficients.defects;

    let throughput =
        (baseline.throughput * m.powf(t.mixing_exponent) * l.powf(t.load_exponent)).min(t.cap * baseline.throughput);
    let energy_kw = baseline.energy_kw
        * l.powf(e.load_exponent)
        * m.powf(e.mixing_exponent)
        * (1.0 + e.coating_quadratic * (c - 1.0).powi(2));
    let defect_rate =
        (baseline.defect_rate + d.coating_linear * (c - 1.0).abs() + d.mixing_linear * (m - d.mixing_knee).max(0.0))
            .clamp(0.0, 1.0);

    Ok(ScenarioProjection {
        params,
        throughput,
        energy_kw,
        defect_rate,
        delta_throughput: throughput - baseline.throughput,
        delta_energy_kw: energy_kw - baseline.energy_kw,
        delta_defect_rate: defect_rate - baseline.defect_rate,
    })
}

/// Projections ranked by throughput per kW, then lower defect rate; equal
/// scenarios keep their input order.
pub fn compare_scenarios(
    scenarios: &[ScenarioParams],
    baseline: Baseline,
    coefficients: &Coefficients,
) -> Result<Vec<ScenarioProjection>> {
    if scenarios.is_empty() {
        return Err(Error::validation("no scenarios to compare"));
    }
    let mut out = scenarios
        .iter()
        .map(|p| simulate_scenario(*p, baseline, coefficients))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        b.throughput_per_kw()
            .total_cmp(&a.throughput_per_kw())
            .then(a.defect_rate.total_cmp(&b.defect_rate))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: Baseline = Baseline {
        throughput: 120.0,
        energy_kw: 100.0,
        defect_rate: 0.02,
    };

    fn params(m: f64, l: f64, c: f64) -> ScenarioParams {
        ScenarioParams {
            mixing_ratio: m,
            load_ratio: l,
            coating_ratio: c,
        }
    }

    #[test]
    fn nominal_is_fixed_point() {
        let p = simulate_scenario(ScenarioParams::NOMINAL, BASE, &Coefficients::default()).unwrap();
        assert_eq!((p.throughput, p.energy_kw, p.defect_rate), (120.0, 100.0, 0.02));
        assert_eq!(
            (p.delta_throughput, p.delta_energy_kw, p.delta_defect_rate),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn load_raises_energy() {
        let p = simulate_scenario(params(1.0, 1.1, 1.0), BASE, &Coefficients::default()).unwrap();
        assert!((p.energy_kw - 112.12).abs() < 0.01, "{}", p.energy_kw);
    }

    #[test]
    fn thick_coating_defects() {
        let p = simulate_scenario(params(1.0, 1.0, 1.5), BASE, &Coefficients::default()).unwrap();
        assert_eq!(p.defect_rate, 0.02 + 0.01);
    }

    #[test]
    fn out_of_bounds_names_parameter() {
        let err = simulate_scenario(params(1.0, 1.6, 1.0), BASE, &Coefficients::default()).unwrap_err();
        assert!(err.to_string().contains("load_ratio"));
    }

    #[test]
    fn compare_rules() {
        let coefficients = Coefficients::default();
        assert!(compare_scenarios(&[], BASE, &coefficients).is_err());
        let one = compare_scenarios(&[params(1.2, 1.0, 1.0)], BASE, &coefficients).unwrap();
        assert_eq!(one.len(), 1);
        let same = compare_scenarios(&[params(1.0, 1.0, 1.0); 2], BASE, &coefficients).unwrap();
        assert_eq!(same[0], same[1]);
    }

    #[test]
    fn bad_coefficients_rejected() {
        let text = DEFAULT_COEFFICIENTS_TOML.replace("load_exponent = 1.2", "load_exponent = -1.0");
        assert!(matches!(Coefficients::from_toml_str(&text), Err(Error::Config(_))));
    }
}

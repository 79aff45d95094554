//! Wind power density at hub height from near-surface speeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::grid::EnsembleField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WpdConfig {
    /// Air density, kg m⁻³.
    pub rho: f64,
    /// Reference height of the input speeds, m.
    pub z_r: f64,
    /// Target height, m.
    pub z: f64,
    /// Power-law shear exponent.
    pub alpha_shear: f64,
}

impl Default for WpdConfig {
    fn default() -> Self {
        Self {
            rho: 1.225,
            z_r: 10.0,
            z: 80.0,
            alpha_shear: 1.0 / 7.0,
        }
    }
}

impl WpdConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("z_r", self.z_r), ("z", self.z), ("alpha_shear", self.alpha_shear)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SgError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `u_r (z / z_r)^α`.
pub fn extrapolate_wind(u_r: f64, config: &WpdConfig) -> Result<f64> {
    if !(u_r >= 0.0) {
        return Err(SgError::Data(format!("wind speed must be non-negative, got {u_r}")));
    }
    config.validate()?;
    Ok(u_r * (config.z / config.z_r).powf(config.alpha_shear))
}

/// `ρ u³ / 2` in W m⁻².
pub fn wind_power_density(u: f64, rho: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(SgError::Data(format!("wind speed must be non-negative, got {u}")));
    }
    if !(rho > 0.0) {
        return Err(SgError::Data(format!("air density must be positive, got {rho}")));
    }
    Ok(0.5 * rho * u * u * u)
}

/// Hub-height power density of every run at one site and time step.
pub fn wpd_site_distribution(runs: &EnsembleField, lat: usize, lon: usize, k: usize, config: &WpdConfig) -> Result<Vec<f64>> {
    let spec = &runs.spec;
    if lat >= spec.n_lat() || lon >= spec.n_lon() || k >= spec.n_time() {
        return Err(SgError::Parameter(format!(
            "index ({lat}, {lon}, {k}) outside the grid ({}, {}, {})",
            spec.n_lat(),
            spec.n_lon(),
            spec.n_time()
        )));
    }
    (0..spec.n_real)
        .map(|r| wind_power_density(extrapolate_wind(runs.get(r, k, lat, lon), config)?, config.rho))
        .collect()
}

/// Distributions for the given calendar month (0-based) in every year of the
/// record, assuming monthly steps starting in January; one entry per year.
pub fn wpd_monthly(runs: &EnsembleField, lat: usize, lon: usize, month: usize, config: &WpdConfig) -> Result<Vec<(usize, Vec<f64>)>> {
    if month >= 12 {
        return Err(SgError::Parameter(format!("month {month} outside 0..12")));
    }
    (month..runs.spec.n_time())
        .step_by(12)
        .map(|k| Ok((k, wpd_site_distribution(runs, lat, lon, k, config)?)))
        .collect()
}

/// `run_id,month,wpd` rows for one site over the given time steps.
pub fn write_wpd_csv(path: impl AsRef<Path>, rows: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run_id", "month", "wpd"])?;
    for (k, values) in rows {
        for (r, v) in values.iter().enumerate() {
            w.write_record([r.to_string(), k.to_string(), format!("{v:.17e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

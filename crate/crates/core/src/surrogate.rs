//! Surrogate generation from a fitted model and a ground-truth factory.
//!
//! Per run and time step, band innovations are drawn and propagated from
//! south to north, each band is synthesized across longitude, the result
//! drives the per-site latent autoregressions, and the Tukey transform plus
//! the smoothed ensemble mean give the surrogate value.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::grid::{EnsembleField, GeoMask, GridSpec, SmoothedMean};
use crate::latvar::{build_transition, packed_innovation_sd, LatVarParams, PackedOperator};
use crate::spectrum::{build_spectrum, synthesis_matrix, BandSpectrumParams, MaternSpectrumParams};
use crate::temporal::TemporalSiteParams;
use crate::tukey::TukeySiteParams;

/// Discarded steps before the first stored time step.
pub const BURN_IN: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    pub tukey: TukeySiteParams,
    pub temporal: TemporalSiteParams,
}

/// Everything needed to draw surrogate runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub grid: GridSpec,
    pub mask: GeoMask,
    pub smoothed_mean: SmoothedMean,
    /// Site models in band-major order, `m * N + n`.
    pub sites: Vec<SiteModel>,
    pub bands: Vec<BandSpectrumParams>,
    /// Latitude parameters per band; band 0 is not read.
    pub latvar: Vec<LatVarParams>,
    pub rng_seed: u64,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.mask.check_grid(&self.grid)?;
        let (m_len, n_len, k_len) = (self.grid.n_lat(), self.grid.n_lon(), self.grid.n_time());
        let mean = &self.smoothed_mean.field.spec;
        if mean.n_real != 1 || mean.n_lat() != m_len || mean.n_lon() != n_len || mean.n_time() != k_len {
            return Err(SgError::Structure("smoothed mean does not match the grid".into()));
        }
        if self.sites.len() != m_len * n_len {
            return Err(SgError::Structure(format!(
                "{} site models for {} sites",
                self.sites.len(),
                m_len * n_len
            )));
        }
        if self.bands.len() != m_len || self.latvar.len() != m_len {
            return Err(SgError::Structure(format!(
                "{} spectrum and {} latitude records for {m_len} bands",
                self.bands.len(),
                self.latvar.len()
            )));
        }
        for s in &self.sites {
            s.tukey.validate()?;
            s.temporal.validate()?;
        }
        for b in &self.bands {
            b.validate()?;
        }
        for l in &self.latvar {
            l.validate()?;
        }
        Ok(())
    }
}

/// Generator keyed by `(seed, run, band, step)`; independent of scheduling.
pub fn stream(seed: u64, run: u64, band: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, run, band, step].iter().enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

struct BandOps {
    synthesis: Vec<DMatrix<f64>>,
    transition: Vec<PackedOperator>,
    innovation_sd: Vec<Vec<f64>>,
}

fn band_ops(bundle: &ModelBundle) -> Result<BandOps> {
    let n = bundle.grid.n_lon();
    let mut ops = BandOps {
        synthesis: vec![],
        transition: vec![],
        innovation_sd: vec![],
    };
    for m in 0..bundle.grid.n_lat() {
        let spectrum = build_spectrum(bundle.mask.band_classes(m), bundle.mask.band_altitudes(m), &bundle.bands[m])?;
        ops.synthesis.push(synthesis_matrix(&spectrum));
        // the southmost band starts from its stationary unit-variance state
        let lat = if m == 0 { LatVarParams::INDEPENDENT } else { bundle.latvar[m] };
        ops.transition.push(build_transition(&lat, n)?.packed());
        ops.innovation_sd.push(packed_innovation_sd(&lat, n)?);
    }
    Ok(ops)
}

fn generate_run(bundle: &ModelBundle, ops: &BandOps, run: u64, residual_only: bool, out: &mut [f64]) {
    let (m_len, n_len, k_len) = (bundle.grid.n_lat(), bundle.grid.n_lon(), bundle.grid.n_time());
    let p_max = bundle.sites.iter().map(|s| s.temporal.p).max().unwrap_or(0);
    // latent AR history per site, most recent first
    let mut history = vec![0.0; m_len * n_len * p_max.max(1)];
    let mut u_prev = vec![0.0; n_len];
    let mut u = vec![0.0; n_len];
    let mut e = vec![0.0; n_len];
    let mean = &bundle.smoothed_mean.field.values;
    for step in 0..BURN_IN + k_len {
        for m in 0..m_len {
            let mut rng = stream(bundle.rng_seed, run, m as u64, step as u64);
            for v in e.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            if m == 0 {
                u.copy_from_slice(&e);
            } else {
                ops.transition[m].apply_into(&u_prev, &mut u);
                for ((x, sd), ev) in u.iter_mut().zip(&ops.innovation_sd[m]).zip(&e) {
                    *x += sd * ev;
                }
            }
            let b = &ops.synthesis[m];
            for n in 0..n_len {
                let mut h = 0.0;
                for j in 0..n_len {
                    h += b[(n, j)] * u[j];
                }
                let site = m * n_len + n;
                let model = &bundle.sites[site];
                let hist = &mut history[site * p_max.max(1)..(site + 1) * p_max.max(1)];
                let mut eps = model.temporal.s * h;
                for (j, f) in model.temporal.phi.iter().enumerate() {
                    eps += f * hist[j];
                }
                if p_max > 0 {
                    hist.rotate_right(1);
                    hist[0] = eps;
                }
                if step >= BURN_IN {
                    let k = step - BURN_IN;
                    let idx = (k * m_len + m) * n_len + n;
                    out[idx] = if residual_only { h } else { mean[idx] + model.tukey.forward(eps) };
                }
            }
            std::mem::swap(&mut u_prev, &mut u);
        }
    }
}

/// Draws `n_runs` surrogate runs. Runs are generated in parallel; the
/// output is identical for any thread count.
pub fn generate(bundle: &ModelBundle, n_runs: usize) -> Result<EnsembleField> {
    generate_impl(bundle, n_runs, false)
}

/// Draws only the space-time innovation field `H` that drives the site
/// autoregressions, with the same streams as [`generate`].
pub fn generate_residuals(bundle: &ModelBundle, n_runs: usize) -> Result<EnsembleField> {
    generate_impl(bundle, n_runs, true)
}

fn generate_impl(bundle: &ModelBundle, n_runs: usize, residual_only: bool) -> Result<EnsembleField> {
    bundle.validate()?;
    if n_runs == 0 {
        return Err(SgError::Config("n_runs must be at least 1".into()));
    }
    let ops = band_ops(bundle)?;
    let spec = bundle.grid.with_real(n_runs);
    let slab = bundle.grid.n_time() * bundle.grid.n_sites();
    let mut values = vec![0.0; n_runs * slab];
    values
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(r, chunk)| generate_run(bundle, &ops, r as u64, residual_only, chunk));
    EnsembleField::new(spec, if residual_only { "residual" } else { "surrogate" }, values)
}

/// Dimensions and true parameters of a synthetic ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_time: usize,
    pub n_real: usize,
    pub seed: u64,
    pub tukey: TukeySiteParams,
    /// Added to `g` linearly from the southmost (0) to the northmost band.
    #[serde(default)]
    pub g_lat_ramp: f64,
    pub temporal: TemporalSiteParams,
    pub spectrum: BandSpectrumParams,
    pub latvar: LatVarParams,
    /// Mean field `level + trend · k + lat_gradient · m`.
    #[serde(default)]
    pub mean_level: f64,
    #[serde(default)]
    pub mean_trend: f64,
    #[serde(default)]
    pub mean_lat_gradient: f64,
}

impl SyntheticConfig {
    /// Unit-variance stationary ocean spectrum with `(α, ν) = (0.5, 1)`.
    pub fn small(n_lat: usize, n_lon: usize, n_time: usize, n_real: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            n_lat,
            n_lon,
            n_time,
            n_real,
            seed,
            tukey: TukeySiteParams::new(0.0, 1.0, 0.4, 0.1)?,
            g_lat_ramp: 0.0,
            temporal: TemporalSiteParams::new(vec![0.5], 1.0)?,
            spectrum: BandSpectrumParams::uniform(MaternSpectrumParams::unit_variance(0.5, 1.0, n_lon)?),
            latvar: LatVarParams::new(0.2, -0.1, 0.7, 0.5)?,
            mean_level: 5.0,
            mean_trend: 0.001,
            mean_lat_gradient: 0.1,
        })
    }

    pub fn bundle(&self, mask: Option<GeoMask>) -> Result<ModelBundle> {
        let grid = GridSpec::regular(self.n_lat, self.n_lon, self.n_time, self.n_real)?;
        let mask = mask.unwrap_or_else(|| GeoMask::all_ocean(self.n_lat, self.n_lon));
        mask.check_grid(&grid)?;
        self.spectrum.validate()?;
        self.latvar.validate()?;
        self.temporal.validate()?;
        let mut sites = Vec::with_capacity(self.n_lat * self.n_lon);
        for m in 0..self.n_lat {
            let frac = if self.n_lat > 1 { m as f64 / (self.n_lat - 1) as f64 } else { 0.0 };
            let tukey = TukeySiteParams::new(
                self.tukey.xi,
                self.tukey.omega,
                self.tukey.g + self.g_lat_ramp * frac,
                self.tukey.h,
            )?;
            for _ in 0..self.n_lon {
                sites.push(SiteModel {
                    tukey,
                    temporal: self.temporal.clone(),
                });
            }
        }
        let mut mean = EnsembleField::zeros(grid.with_real(1), "mean")?;
        for k in 0..self.n_time {
            for m in 0..self.n_lat {
                for n in 0..self.n_lon {
                    let v = self.mean_level + self.mean_trend * k as f64 + self.mean_lat_gradient * m as f64;
                    mean.set(0, k, m, n, v);
                }
            }
        }
        let mut latvar = vec![self.latvar; self.n_lat];
        latvar[0] = LatVarParams::INDEPENDENT;
        Ok(ModelBundle {
            grid,
            mask,
            smoothed_mean: SmoothedMean { field: mean, lambda: 1.0 },
            sites,
            bands: vec![self.spectrum.clone(); self.n_lat],
            latvar,
            rng_seed: self.seed,
        })
    }
}

/// Simulated ensemble together with the exact bundle that produced it.
pub fn generate_synthetic_truth(config: &SyntheticConfig, mask: Option<GeoMask>) -> Result<(EnsembleField, ModelBundle)> {
    let bundle = config.bundle(mask)?;
    let field = generate(&bundle, config.n_real)?;
    Ok((field, bundle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SiteClass;

    fn degenerate(n_lat: usize, n_lon: usize, n_time: usize, n_real: usize) -> SyntheticConfig {
        let mut c = SyntheticConfig::small(n_lat, n_lon, n_time, n_real, 9).unwrap();
        c.tukey = TukeySiteParams::IDENTITY;
        c.temporal = TemporalSiteParams::white(1.0);
        c.latvar = LatVarParams::new(0.0, 0.0, 0.0, 1.0).unwrap();
        c.mean_level = 0.0;
        c.mean_trend = 0.0;
        c.mean_lat_gradient = 0.0;
        c
    }

    #[test]
    fn tiny_config_smoke() {
        let c = SyntheticConfig::small(4, 16, 120, 3, 1).unwrap();
        let (field, bundle) = generate_synthetic_truth(&c, None).unwrap();
        assert_eq!(field.spec.n_real, 3);
        assert_eq!(field.values.len(), 4 * 16 * 120 * 3);
        assert!(field.values.iter().all(|v| v.is_finite()));
        bundle.validate().unwrap();
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let c = SyntheticConfig::small(3, 8, 30, 2, 77).unwrap();
        let (a, bundle) = generate_synthetic_truth(&c, None).unwrap();
        let b = generate(&bundle, 2).unwrap();
        assert_eq!(a.values, b.values);
        let mut other = bundle.clone();
        other.rng_seed += 1;
        assert_ne!(generate(&other, 2).unwrap().values, a.values);
    }

    #[test]
    fn degenerate_bundle_is_standard_normal() {
        let c = degenerate(2, 8, 1250, 1);
        let (field, _) = generate_synthetic_truth(&c, None).unwrap();
        // 8 longitudes x 1250 steps at band 1
        let draws: Vec<f64> = (0..1250).flat_map(|k| field.row(0, k, 1).to_vec()).collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 / n.sqrt(), "{mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "{var}");
    }

    #[test]
    fn zero_spectrum_rejected() {
        let mut c = SyntheticConfig::small(2, 8, 20, 1, 0).unwrap();
        c.spectrum.beta_psi = [0.0; 3];
        assert!(generate_synthetic_truth(&c, None).is_err());
    }

    #[test]
    fn inconsistent_bundle_rejected() {
        let c = SyntheticConfig::small(2, 8, 20, 1, 0).unwrap();
        let mut b = c.bundle(None).unwrap();
        b.sites.pop();
        assert!(matches!(generate(&b, 1), Err(SgError::Structure(_))));
        let mut b = c.bundle(None).unwrap();
        b.mask = GeoMask::new(2, 8, vec![SiteClass::Land; 8], vec![0.0; 8]).unwrap_or_else(|_| GeoMask::all_ocean(1, 8));
        assert!(generate(&b, 1).is_err());
    }
}

//! Evolutionary spectrum across longitude (second inference stage).
//!
//! Within a latitude band the residual field is represented as
//! `H(n) = Σ_c f_n(c) e^{i 2π n c / N} H̃(c)` with a site-dependent amplitude
//! `f_n(c)` that switches between mountain, land and ocean regimes and is
//! blended across coastlines by a taper. Real fields require Hermitian
//! spectral coefficients; they are carried in a packed real form with `N`
//! independent standard normal degrees of freedom.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::grid::SiteClass;
use crate::optim::{minimize, MinimizeOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Largest land dilation tried when fitting, in grid cells.
pub const MAX_TAPER_DILATE: usize = 3;
/// Altitude-link slopes are optimized per kilometre.
const GAMMA_SCALE: f64 = 1e-3;

/// Variance scale, inverse range and smoothness of one spectral regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternSpectrumParams {
    pub psi: f64,
    pub alpha: f64,
    pub nu: f64,
}

impl MaternSpectrumParams {
    pub fn new(psi: f64, alpha: f64, nu: f64) -> Result<Self> {
        let p = Self { psi, alpha, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("psi", self.psi), ("alpha", self.alpha), ("nu", self.nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SgError::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Parameters with the given shape whose site variance `Σ_c |f(c)|²`
    /// equals one on an `n`-point circle.
    pub fn unit_variance(alpha: f64, nu: f64, n: usize) -> Result<Self> {
        let shape = Self::new(1.0, alpha, nu)?;
        let total: f64 = (0..n).map(|c| power_unchecked(c, &shape, n)).sum();
        Self::new(1.0 / total, alpha, nu)
    }
}

#[inline]
fn power_unchecked(c: usize, p: &MaternSpectrumParams, n: usize) -> f64 {
    let c = c.min(n - c);
    let s = (c as f64 * PI / n as f64).sin();
    p.psi * (p.alpha * p.alpha + 4.0 * s * s).powf(-p.nu - 0.5)
}

/// `|f(c)|² = ψ {α² + 4 sin²(cπ/N)}^{-ν-1/2}`.
pub fn matern_spectrum(c: usize, params: &MaternSpectrumParams, n: usize) -> Result<f64> {
    params.validate()?;
    if c >= n {
        return Err(SgError::Parameter(format!("wavenumber {c} outside 0..{n}")));
    }
    Ok(power_unchecked(c, params, n))
}

/// `β exp(arctan(A γ))`.
pub fn altitude_link(beta: f64, gamma: f64, altitude: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SgError::Parameter(format!("beta must be positive, got {beta}")));
    }
    if !gamma.is_finite() || !altitude.is_finite() {
        return Err(SgError::Parameter("gamma and altitude must be finite".into()));
    }
    Ok(beta * (altitude * gamma).atan().exp())
}

/// Coastal blending weights for one band.
///
/// The land indicator (land or high mountain) is dilated by `dilate` cells on
/// the circle, then smoothed with a triangular kernel `max(0, 1 - |d|/r')`
/// normalized to unit sum. Returns one weight in `[0, 1]` per longitude.
pub fn land_taper(classes: &[SiteClass], dilate: usize, halfwidth: f64) -> Result<Vec<f64>> {
    if !(halfwidth > 0.0 && halfwidth.is_finite()) {
        return Err(SgError::Parameter(format!(
            "taper half-width must be positive, got {halfwidth}"
        )));
    }
    let n = classes.len();
    let land: Vec<bool> = classes.iter().map(|c| c.is_land()).collect();
    let dilated: Vec<f64> = (0..n)
        .map(|i| {
            let hit = (0..=dilate.min(n)).any(|d| land[(i + d) % n] || land[(i + n - d % n) % n]);
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let kernel: Vec<f64> = (0..n)
        .map(|d| {
            let dist = d.min(n - d) as f64;
            (1.0 - dist / halfwidth).max(0.0)
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    Ok((0..n)
        .map(|i| {
            let b: f64 = (0..n).map(|j| dilated[j] * kernel[(i + n - j) % n]).sum::<f64>() / total;
            b.clamp(0.0, 1.0)
        })
        .collect())
}

/// Longitudinal parameters of one band. Arrays are indexed by regime:
/// `[mountain, land, ocean]`; the ocean regime carries no altitude link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpectrumParams {
    pub beta_psi: [f64; 3],
    pub beta_alpha: [f64; 3],
    pub beta_nu: [f64; 3],
    pub gamma_psi: f64,
    pub gamma_alpha: f64,
    pub gamma_nu: f64,
    pub taper_dilate: usize,
    pub taper_halfwidth: f64,
}

pub const MOUNTAIN: usize = 0;
pub const LAND: usize = 1;
pub const OCEAN: usize = 2;

impl BandSpectrumParams {
    /// The same stationary regime everywhere, no altitude dependence.
    pub fn uniform(regime: MaternSpectrumParams) -> Self {
        Self {
            beta_psi: [regime.psi; 3],
            beta_alpha: [regime.alpha; 3],
            beta_nu: [regime.nu; 3],
            gamma_psi: 0.0,
            gamma_alpha: 0.0,
            gamma_nu: 0.0,
            taper_dilate: 0,
            taper_halfwidth: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.beta_psi.iter().chain(&self.beta_alpha).chain(&self.beta_nu) {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(SgError::Parameter(format!("beta values must be positive, got {v}")));
            }
        }
        for v in [self.gamma_psi, self.gamma_alpha, self.gamma_nu] {
            if !v.is_finite() {
                return Err(SgError::Parameter("gamma values must be finite".into()));
            }
        }
        if !(self.taper_halfwidth > 0.0 && self.taper_halfwidth.is_finite()) {
            return Err(SgError::Parameter("taper half-width must be positive".into()));
        }
        Ok(())
    }

    /// Regime parameters at a site of the given class and altitude.
    pub fn regime_at(&self, class: SiteClass, altitude: f64) -> Result<MaternSpectrumParams> {
        let j = match class {
            SiteClass::HighMountain => MOUNTAIN,
            SiteClass::Land => LAND,
            SiteClass::Ocean => OCEAN,
        };
        if j == OCEAN {
            return MaternSpectrumParams::new(self.beta_psi[j], self.beta_alpha[j], self.beta_nu[j]);
        }
        MaternSpectrumParams::new(
            altitude_link(self.beta_psi[j], self.gamma_psi, altitude)?,
            altitude_link(self.beta_alpha[j], self.gamma_alpha, altitude)?,
            altitude_link(self.beta_nu[j], self.gamma_nu, altitude)?,
        )
    }

    /// Land/mountain regimes tied together, as in the land-and-ocean model.
    pub fn is_lao(&self) -> bool {
        self.beta_psi[MOUNTAIN] == self.beta_psi[LAND]
            && self.beta_alpha[MOUNTAIN] == self.beta_alpha[LAND]
            && self.beta_nu[MOUNTAIN] == self.beta_nu[LAND]
    }
}

/// Non-negative amplitudes `f_n(c)` for every site `n` and wavenumber `c`
/// of one band, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionarySpectrum {
    pub n_lon: usize,
    pub amplitudes: Vec<f64>,
}

impl EvolutionarySpectrum {
    /// Same amplitudes at every longitude.
    pub fn stationary(regime: &MaternSpectrumParams, n: usize) -> Result<Self> {
        regime.validate()?;
        let row: Vec<f64> = (0..n).map(|c| power_unchecked(c, regime, n).sqrt()).collect();
        Ok(Self {
            n_lon: n,
            amplitudes: row.repeat(n),
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n_lon: n,
            amplitudes: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn amplitude(&self, site: usize, c: usize) -> f64 {
        self.amplitudes[site * self.n_lon + c]
    }

    pub fn row(&self, site: usize) -> &[f64] {
        &self.amplitudes[site * self.n_lon..(site + 1) * self.n_lon]
    }

    /// Marginal variance `Σ_c f_n(c)²` at every site.
    pub fn site_variances(&self) -> Vec<f64> {
        (0..self.n_lon)
            .map(|n| self.row(n).iter().map(|a| a * a).sum())
            .collect()
    }
}

/// Amplitudes of one band: mountain sites use their own regime, land sites
/// are scaled by the taper `b`, ocean sites by `1 - b`.
pub fn build_spectrum(
    classes: &[SiteClass],
    altitudes: &[f64],
    params: &BandSpectrumParams,
) -> Result<EvolutionarySpectrum> {
    params.validate()?;
    let n = classes.len();
    if altitudes.len() != n {
        return Err(SgError::Structure("class and altitude rows differ in length".into()));
    }
    let taper = land_taper(classes, params.taper_dilate, params.taper_halfwidth)?;
    let mut amplitudes = Vec::with_capacity(n * n);
    for site in 0..n {
        let class = classes[site];
        let regime = params.regime_at(class, altitudes[site])?;
        let weight = match class {
            SiteClass::HighMountain => 1.0,
            SiteClass::Land => taper[site],
            SiteClass::Ocean => 1.0 - taper[site],
        };
        amplitudes.extend((0..n).map(|c| weight * power_unchecked(c, &regime, n).sqrt()));
    }
    Ok(EvolutionarySpectrum {
        n_lon: n,
        amplitudes,
    })
}

/// Hermitian spectral coefficients `H̃(0..N)` of one band.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs(pub Vec<Complex64>);

impl SpectralCoeffs {
    pub fn zeros(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Unpacks `N` reals: `u₀ = H̃(0)`, `(u_{2c-1}, u_{2c}) = √2 (Re, Im) H̃(c)`
    /// for `0 < c < N/2`, and `u_{N-1} = H̃(N/2)` when `N` is even. Standard
    /// normal `u` gives `E|H̃(c)|² = 1` at every wavenumber.
    pub fn from_packed(u: &[f64]) -> Self {
        let n = u.len();
        let mut h = vec![Complex64::new(0.0, 0.0); n];
        if n == 0 {
            return Self(h);
        }
        h[0] = Complex64::new(u[0], 0.0);
        for c in 1..n.div_ceil(2) {
            let v = Complex64::new(u[2 * c - 1], u[2 * c]) / SQRT_2;
            h[c] = v;
            h[n - c] = v.conj();
        }
        if n % 2 == 0 && n > 1 {
            h[n / 2] = Complex64::new(u[n - 1], 0.0);
        }
        Self(h)
    }

    /// Inverse of [`SpectralCoeffs::from_packed`]; assumes Hermitian symmetry.
    pub fn to_packed(&self) -> Vec<f64> {
        let n = self.0.len();
        let mut u = vec![0.0; n];
        if n == 0 {
            return u;
        }
        u[0] = self.0[0].re;
        for c in 1..n.div_ceil(2) {
            u[2 * c - 1] = SQRT_2 * self.0[c].re;
            u[2 * c] = SQRT_2 * self.0[c].im;
        }
        if n % 2 == 0 && n > 1 {
            u[n - 1] = self.0[n / 2].re;
        }
        u
    }

    /// Checks `H̃(N-c) = conj H̃(c)` with real `H̃(0)` (and `H̃(N/2)`).
    pub fn check_hermitian(&self, tol: f64) -> Result<()> {
        let n = self.0.len();
        let scale = self.0.iter().map(|v| v.norm()).fold(1.0, f64::max);
        for c in 0..n {
            let mirror = self.0[(n - c) % n].conj();
            if (self.0[c] - mirror).norm() > tol * scale {
                return Err(SgError::Precondition(format!(
                    "spectral coefficients are not Hermitian at wavenumber {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Evaluates `Σ_c f_n(c) e^{i2πnc/N} H̃(c)` directly and returns the real
/// parts.
pub fn synthesize_band(spectrum: &EvolutionarySpectrum, coeffs: &SpectralCoeffs) -> Result<Vec<f64>> {
    let n = spectrum.n_lon;
    if coeffs.len() != n {
        return Err(SgError::Structure(format!(
            "{} coefficients for a band of {n} longitudes",
            coeffs.len()
        )));
    }
    coeffs.check_hermitian(1e-12)?;
    let twiddle: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64))
        .collect();
    Ok((0..n)
        .map(|site| {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..n {
                acc += spectrum.amplitude(site, c) * twiddle[(site * c) % n] * coeffs.0[c];
            }
            acc.re
        })
        .collect())
}

/// Real `N × N` matrix `B` mapping packed coefficients to the longitude
/// series: `H = B u`. Assumes `f_n(c) = f_n(N-c)`, which holds for every
/// spectrum built here.
pub fn synthesis_matrix(spectrum: &EvolutionarySpectrum) -> DMatrix<f64> {
    let n = spectrum.n_lon;
    let mut b = DMatrix::<f64>::zeros(n, n);
    for site in 0..n {
        b[(site, 0)] = spectrum.amplitude(site, 0);
        for c in 1..n.div_ceil(2) {
            let theta = 2.0 * PI * ((site * c) % n) as f64 / n as f64;
            let amp = (spectrum.amplitude(site, c) + spectrum.amplitude(site, n - c)) / SQRT_2;
            b[(site, 2 * c - 1)] = amp * theta.cos();
            b[(site, 2 * c)] = -amp * theta.sin();
        }
        if n % 2 == 0 && n > 1 {
            let sign = if site % 2 == 0 { 1.0 } else { -1.0 };
            b[(site, n - 1)] = sign * spectrum.amplitude(site, n / 2);
        }
    }
    b
}

/// Least-squares inverse of [`synthesis_matrix`]: maps a longitude series
/// back to packed spectral coefficients. Exact when `B` is nonsingular.
pub fn analysis_matrix(spectrum: &EvolutionarySpectrum) -> Result<DMatrix<f64>> {
    let b = synthesis_matrix(spectrum);
    let scale = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    b.pseudo_inverse(1e-12 * scale.max(f64::MIN_POSITIVE))
        .map_err(|e| SgError::Fit(format!("spectral inversion failed: {e}")))
}

/// Covariance `Re(A Aᴴ)` of the band implied by unit spectral coefficients.
pub fn band_covariance(spectrum: &EvolutionarySpectrum) -> DMatrix<f64> {
    let b = synthesis_matrix(spectrum);
    let mut cov = &b * b.transpose();
    // exact symmetry
    let n = cov.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Sufficient statistics of independent replicates of one band.
#[derive(Debug, Clone)]
pub struct BandData {
    pub n_lon: usize,
    pub n_rep: usize,
    /// `Σ h hᵀ` over replicates.
    pub scatter: DMatrix<f64>,
}

impl BandData {
    pub fn from_rows<'a>(n_lon: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut scatter = DMatrix::<f64>::zeros(n_lon, n_lon);
        let mut n_rep = 0;
        for row in rows {
            if row.len() != n_lon {
                return Err(SgError::Structure(format!(
                    "replicate has {} values, band has {n_lon}",
                    row.len()
                )));
            }
            for i in 0..n_lon {
                let ri = row[i];
                for j in 0..=i {
                    scatter[(i, j)] += ri * row[j];
                }
            }
            n_rep += 1;
        }
        for i in 0..n_lon {
            for j in 0..i {
                scatter[(j, i)] = scatter[(i, j)];
            }
        }
        Ok(Self {
            n_lon,
            n_rep,
            scatter,
        })
    }

    /// Mean of squared values per site.
    pub fn site_variances(&self) -> Vec<f64> {
        (0..self.n_lon)
            .map(|i| self.scatter[(i, i)] / self.n_rep.max(1) as f64)
            .collect()
    }
}

/// Gaussian log-likelihood of the replicates under a dense covariance. On a
/// failed factorization retries once with `1e-8 · trace / N` on the diagonal.
pub fn gaussian_loglik(cov: &DMatrix<f64>, data: &BandData) -> Option<f64> {
    let n = cov.nrows();
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 1e-8 * cov.trace() / n as f64;
            if !(ridge > 0.0) {
                return None;
            }
            let mut c = cov.clone();
            for i in 0..n {
                c[(i, i)] += ridge;
            }
            c.cholesky()?
        }
    };
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..n {
        log_det += 2.0 * l[(i, i)].ln();
    }
    let solved = chol.solve(&data.scatter);
    let quad = solved.trace();
    let ll = -0.5 * (data.n_rep as f64 * (n as f64 * LN_2PI + log_det) + quad);
    ll.is_finite().then_some(ll)
}

/// Exact log-likelihood for a stationary spectrum: the covariance is
/// circulant with eigenvalues `N |f(c)|²`, so it diagonalizes in the
/// discrete Fourier basis.
pub fn stationary_loglik(regime: &MaternSpectrumParams, data: &BandData) -> Option<f64> {
    let n = data.n_lon;
    let mut total = 0.0;
    for k in 0..n {
        let lambda = n as f64 * power_unchecked(k, regime, n);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return None;
        }
        // Σ_reps |ĥ_k|² = v_kᴴ S v_k with v_k[n] = e^{i2πnk/N}
        let mut periodogram = 0.0;
        for a in 0..n {
            for b in 0..n {
                let angle = 2.0 * PI * (((a + n * n - b) * k) % n) as f64 / n as f64;
                periodogram += data.scatter[(a, b)] * angle.cos();
            }
        }
        total += data.n_rep as f64 * lambda.ln() + periodogram / (n as f64 * lambda);
    }
    let ll = -0.5 * (data.n_rep as f64 * n as f64 * LN_2PI + total);
    ll.is_finite().then_some(ll)
}

/// Sub-model used for the longitudinal fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LonSubModel {
    /// Separate mountain and land regimes.
    Full,
    /// Mountain and land regimes tied (`f¹ = f²`).
    Lao,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFit {
    pub params: BandSpectrumParams,
    pub sub_model: LonSubModel,
    pub loglik: f64,
    /// Best log-likelihood of the tied (land = mountain) model on the same data.
    pub lao_loglik: f64,
    pub n_rep: usize,
    pub n_params: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    mountain: bool,
    land: bool,
    ocean: bool,
    altitude: bool,
    taper: bool,
}

impl Layout {
    fn of(classes: &[SiteClass], altitudes: &[f64]) -> Self {
        let has = |c: SiteClass| classes.contains(&c);
        let (mountain, land, ocean) = (
            has(SiteClass::HighMountain),
            has(SiteClass::Land),
            has(SiteClass::Ocean),
        );
        let altitude = classes
            .iter()
            .zip(altitudes)
            .any(|(c, a)| c.is_land() && *a != 0.0);
        Self {
            mountain,
            land,
            ocean,
            altitude,
            taper: (land || mountain) && (land || ocean),
        }
    }
}

/// Maps between the free optimization vector and band parameters. Regimes
/// absent from the band keep their starting values.
struct Codec {
    layout: Layout,
    sub_model: LonSubModel,
    base: BandSpectrumParams,
}

impl Codec {
    fn regimes(&self) -> Vec<Vec<usize>> {
        let l = &self.layout;
        let mut out = vec![];
        match self.sub_model {
            LonSubModel::Full => {
                if l.mountain {
                    out.push(vec![MOUNTAIN]);
                }
                if l.land {
                    out.push(vec![LAND]);
                }
            }
            LonSubModel::Lao => {
                if l.mountain || l.land {
                    out.push(vec![MOUNTAIN, LAND]);
                }
            }
        }
        if l.ocean {
            out.push(vec![OCEAN]);
        }
        out
    }

    fn n_free(&self) -> usize {
        3 * self.regimes().len() + if self.layout.altitude { 3 } else { 0 } + usize::from(self.layout.taper)
    }

    fn encode(&self, p: &BandSpectrumParams) -> Vec<f64> {
        let mut x = vec![];
        for group in self.regimes() {
            let j = group[0];
            x.extend([p.beta_psi[j].ln(), p.beta_alpha[j].ln(), p.beta_nu[j].ln()]);
        }
        if self.layout.altitude {
            x.extend([
                p.gamma_psi / GAMMA_SCALE,
                p.gamma_alpha / GAMMA_SCALE,
                p.gamma_nu / GAMMA_SCALE,
            ]);
        }
        if self.layout.taper {
            x.push(p.taper_halfwidth.ln());
        }
        x
    }

    fn decode(&self, x: &[f64]) -> BandSpectrumParams {
        let mut p = self.base.clone();
        let mut i = 0;
        for group in self.regimes() {
            for j in group {
                p.beta_psi[j] = x[i].exp();
                p.beta_alpha[j] = x[i + 1].exp();
                p.beta_nu[j] = x[i + 2].exp();
            }
            i += 3;
        }
        if self.layout.altitude {
            p.gamma_psi = x[i] * GAMMA_SCALE;
            p.gamma_alpha = x[i + 1] * GAMMA_SCALE;
            p.gamma_nu = x[i + 2] * GAMMA_SCALE;
            i += 3;
        }
        if self.layout.taper {
            p.taper_halfwidth = x[i].exp();
        }
        p
    }
}

/// Log-likelihood of the band data under `params`, `None` when the
/// parameters are invalid or the covariance cannot be factored.
pub fn band_loglik(
    classes: &[SiteClass],
    altitudes: &[f64],
    params: &BandSpectrumParams,
    data: &BandData,
) -> Option<f64> {
    let spectrum = build_spectrum(classes, altitudes, params).ok()?;
    gaussian_loglik(&band_covariance(&spectrum), data)
}

fn starting_params(data: &BandData) -> BandSpectrumParams {
    let v = data.site_variances();
    let mean_var = (v.iter().sum::<f64>() / v.len() as f64).max(1e-12);
    let shape = MaternSpectrumParams::unit_variance(1.0, 0.5, data.n_lon).expect("valid shape");
    let mut p = BandSpectrumParams::uniform(MaternSpectrumParams {
        psi: shape.psi * mean_var,
        ..shape
    });
    p.taper_halfwidth = 2.0;
    p
}

fn fit_from(
    classes: &[SiteClass],
    altitudes: &[f64],
    data: &BandData,
    sub_model: LonSubModel,
    start: &BandSpectrumParams,
    opts: &MinimizeOptions,
) -> (BandSpectrumParams, f64) {
    let codec = Codec {
        layout: Layout::of(classes, altitudes),
        sub_model,
        base: start.clone(),
    };
    let x0 = codec.encode(start);
    let m = minimize(
        |x: &[f64]| match band_loglik(classes, altitudes, &codec.decode(x), data) {
            Some(ll) => -ll,
            None => f64::INFINITY,
        },
        &x0,
        opts,
    );
    (codec.decode(&m.x), -m.value)
}

/// Maximum-likelihood fit of one band's longitudinal parameters.
///
/// The taper dilation is searched over `0..=MAX_TAPER_DILATE`. The full model
/// starts from the tied optimum, so its log-likelihood is never below the
/// tied model's on the same data.
pub fn fit_band(
    data: &BandData,
    classes: &[SiteClass],
    altitudes: &[f64],
    sub_model: LonSubModel,
) -> Result<BandFit> {
    if data.n_rep < 3 {
        return Err(SgError::Fit(format!(
            "at least 3 replicates are needed, found {}",
            data.n_rep
        )));
    }
    if classes.len() != data.n_lon || altitudes.len() != data.n_lon {
        return Err(SgError::Structure("mask row does not match the band width".into()));
    }
    let layout = Layout::of(classes, altitudes);
    let opts = MinimizeOptions {
        max_evals: 3000,
        ftol: 1e-10,
        initial_step: 0.3,
        polish_sweeps: 2,
    };
    let dilations: Vec<usize> = if layout.taper {
        (0..=MAX_TAPER_DILATE).collect()
    } else {
        vec![0]
    };
    let base = starting_params(data);
    let mut best: Option<(BandSpectrumParams, f64, LonSubModel)> = None;
    let mut best_lao = f64::NEG_INFINITY;
    for &dilate in &dilations {
        let start = BandSpectrumParams {
            taper_dilate: dilate,
            ..base.clone()
        };
        let (lao, lao_ll) = fit_from(classes, altitudes, data, LonSubModel::Lao, &start, &opts);
        best_lao = best_lao.max(lao_ll);
        let candidate = match sub_model {
            LonSubModel::Lao => (lao, lao_ll),
            LonSubModel::Full => {
                let (full, full_ll) = fit_from(classes, altitudes, data, LonSubModel::Full, &lao, &opts);
                if full_ll >= lao_ll {
                    (full, full_ll)
                } else {
                    (lao, lao_ll)
                }
            }
        };
        if best.as_ref().map_or(true, |b| candidate.1 > b.1) {
            best = Some((candidate.0, candidate.1, sub_model));
        }
    }
    let (params, loglik, sub_model) = best.expect("at least one dilation");
    if !loglik.is_finite() {
        return Err(SgError::Fit("band likelihood is not finite at any tried parameters".into()));
    }
    let codec = Codec {
        layout,
        sub_model,
        base: params.clone(),
    };
    Ok(BandFit {
        n_params: codec.n_free() + usize::from(layout.taper),
        params,
        sub_model,
        loglik,
        lao_loglik: best_lao,
        n_rep: data.n_rep,
    })
}

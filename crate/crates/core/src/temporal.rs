//! Per-site Tukey g-and-h autoregressive fitting (first inference stage).
//!
//! Each site's deviations `D_{r,k}` are modelled as `ξ + ω τ_{g,h}(ε_{r,k})`
//! with a latent Gaussian AR(p) `ε_k = Σ φ_j ε_{k-j} + S H_k`. Realizations
//! are independent replicates sharing the site parameters.
//!
//! The latent scale is not identified separately from `(ω, g, h)`:
//! `ω τ_{g,h}(c z) = (c ω) τ_{cg, c²h}(z)`. The Tukey fit therefore pins the
//! innovation scale at `S = 1` and lets `ω` carry the scale. The Gaussian AR
//! comparison model fixes `ξ = 0, ω = 1, g = h = 0` and estimates `S` instead.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::optim::{minimize, MinimizeOptions};
use crate::tukey::{self, TukeySiteParams, H_MAX};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Inner tolerance of the numerical inverse while evaluating the likelihood.
const FIT_INVERSE_TOL: f64 = 1e-12;
/// Default largest autoregressive order tried by order selection.
pub const DEFAULT_P_MAX: usize = 3;
/// Upper bound on the starting value of `h`.
const H_START_MAX: f64 = 0.4;

/// Latent autoregression of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSiteParams {
    pub p: usize,
    pub phi: Vec<f64>,
    #[serde(rename = "S")]
    pub s: f64,
}

impl TemporalSiteParams {
    pub fn new(phi: Vec<f64>, s: f64) -> Result<Self> {
        let t = Self { p: phi.len(), phi, s };
        t.validate()?;
        Ok(t)
    }

    pub fn white(s: f64) -> Self {
        Self { p: 0, phi: vec![], s }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi.len() != self.p {
            return Err(SgError::Parameter(format!(
                "order {} but {} coefficients",
                self.p,
                self.phi.len()
            )));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(SgError::Parameter(format!("S must be positive, got {}", self.s)));
        }
        if !is_stationary(&self.phi) {
            return Err(SgError::Parameter(format!(
                "AR coefficients {:?} are not stationary",
                self.phi
            )));
        }
        Ok(())
    }

    /// Stationary variance of the latent process when the innovations have
    /// variance `innovation_var`.
    pub fn stationary_variance(&self, innovation_var: f64) -> f64 {
        // γ₀ = σ² / Π(1 - κ_j²) with κ the partial autocorrelations
        let pacf = ar_to_pacf(&self.phi).expect("validated stationary");
        let s2 = self.s * self.s * innovation_var;
        pacf.iter().fold(s2, |acc, k| acc / (1.0 - k * k))
    }
}

/// Which marginal model a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalModel {
    /// Tukey g-and-h marginal over a latent AR(p) with `S = 1`.
    TukeyAr,
    /// Gaussian AR(p): `ξ = 0, ω = 1, g = h = 0`, `S` free.
    GaussianAr,
}

impl TemporalModel {
    pub fn n_params(self, p: usize) -> usize {
        match self {
            TemporalModel::TukeyAr => 4 + p,
            TemporalModel::GaussianAr => p + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteFitResult {
    pub model: TemporalModel,
    pub tukey: TukeySiteParams,
    pub temporal: TemporalSiteParams,
    pub loglik: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_params: usize,
    /// Log-likelihood at the starting point of the optimizer.
    pub initial_loglik: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub optimizer: MinimizeOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: MinimizeOptions {
                max_evals: 2000,
                ftol: 1e-9,
                initial_step: 0.1,
                polish_sweeps: 2,
            },
        }
    }
}

/// Durbin–Levinson map from partial autocorrelations to AR coefficients.
pub fn pacf_to_ar(pacf: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(pacf.len());
    for (k, &kappa) in pacf.iter().enumerate() {
        let prev = phi.clone();
        for j in 0..k {
            phi[j] = prev[j] - kappa * prev[k - 1 - j];
        }
        phi.push(kappa);
    }
    phi
}

/// Inverse of [`pacf_to_ar`]; `None` unless every partial autocorrelation is
/// strictly inside `(-1, 1)`.
pub fn ar_to_pacf(phi: &[f64]) -> Option<Vec<f64>> {
    let mut a = phi.to_vec();
    let mut pacf = vec![0.0; phi.len()];
    for k in (0..phi.len()).rev() {
        let kappa = a[k];
        if !(kappa.abs() < 1.0) {
            return None;
        }
        pacf[k] = kappa;
        let denom = 1.0 - kappa * kappa;
        let prev = a.clone();
        for j in 0..k {
            a[j] = (prev[j] + kappa * prev[k - 1 - j]) / denom;
        }
        a.truncate(k);
    }
    Some(pacf)
}

/// All roots of `1 - φ₁x - … - φ_p x^p` lie strictly outside the unit circle.
pub fn is_stationary(phi: &[f64]) -> bool {
    phi.iter().all(|v| v.is_finite()) && ar_to_pacf(phi).is_some()
}

fn validate_series(series: &[Vec<f64>], p: usize) -> Result<usize> {
    let n_real = series.len();
    if n_real == 0 {
        return Err(SgError::Precondition("at least one realization is required".into()));
    }
    let k_len = series[0].len();
    if series.iter().any(|s| s.len() != k_len) {
        return Err(SgError::Structure("realizations differ in length".into()));
    }
    if k_len <= p + 10 {
        return Err(SgError::Precondition(format!(
            "series length {k_len} too short for order {p} (need more than {})",
            p + 10
        )));
    }
    if series.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SgError::Data("non-finite value in series".into()));
    }
    let n = (n_real * k_len) as f64;
    let mean = series.iter().flatten().sum::<f64>() / n;
    let var = series.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 1e-24 * mean.abs().max(1.0).powi(2)) {
        return Err(SgError::Data("series has zero variance".into()));
    }
    Ok(k_len)
}

/// Pooled least-squares AR fit of `z` on its own lags for `k ≥ start`.
/// Returns coefficients and residual sum of squares.
fn ar_least_squares(latent: &[Vec<f64>], p: usize, start: usize) -> Option<(Vec<f64>, f64)> {
    if p == 0 {
        let rss = latent.iter().flat_map(|z| &z[start..]).map(|v| v * v).sum();
        return Some((vec![], rss));
    }
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut yty = 0.0;
    for z in latent {
        for k in start..z.len() {
            let y = z[k];
            yty += y * y;
            for i in 0..p {
                let xi = z[k - 1 - i];
                xty[i] += xi * y;
                for j in 0..=i {
                    xtx[(i, j)] += xi * z[k - 1 - j];
                }
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    let chol = xtx.clone().cholesky()?;
    let beta = chol.solve(&xty);
    let rss = (yty - beta.dot(&xty)).max(0.0);
    Some((beta.iter().copied().collect(), rss))
}

fn ar_rss(latent: &[Vec<f64>], phi: &[f64], start: usize) -> f64 {
    let mut rss = 0.0;
    for z in latent {
        for k in start..z.len() {
            let mut e = z[k];
            for (j, f) in phi.iter().enumerate() {
                e -= f * z[k - 1 - j];
            }
            rss += e * e;
        }
    }
    rss
}

/// Stationary AR coefficients minimizing the residual sum of squares:
/// least squares when that is stationary, otherwise a search over
/// partial autocorrelations.
fn stationary_ar(latent: &[Vec<f64>], p: usize, start: usize) -> Option<(Vec<f64>, f64)> {
    let ls = ar_least_squares(latent, p, start);
    if let Some((phi, rss)) = &ls {
        if is_stationary(phi) {
            return ls.clone().map(|_| (phi.clone(), *rss));
        }
    }
    let x0 = vec![0.0; p];
    let opts = MinimizeOptions {
        max_evals: 400 * p.max(1),
        ftol: 1e-12,
        initial_step: 0.3,
        polish_sweeps: 1,
    };
    let m = minimize(
        |u: &[f64]| {
            let pacf: Vec<f64> = u.iter().map(|v| v.tanh()).collect();
            ar_rss(latent, &pacf_to_ar(&pacf), start)
        },
        &x0,
        &opts,
    );
    let pacf: Vec<f64> = m.x.iter().map(|v| v.tanh()).collect();
    let phi = pacf_to_ar(&pacf);
    if !is_stationary(&phi) {
        return None;
    }
    let rss = ar_rss(latent, &phi, start);
    Some((phi, rss))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Negative Tukey-AR log-likelihood for fixed marginal parameters, with the
/// AR coefficients profiled out. `cache` carries the latent values between
/// calls as Newton starting points.
struct TukeyObjective<'a> {
    series: &'a [Vec<f64>],
    p: usize,
    start: usize,
    cache: Vec<Vec<f64>>,
}

impl<'a> TukeyObjective<'a> {
    fn new(series: &'a [Vec<f64>], p: usize, start: usize) -> Self {
        let cache = series.iter().map(|s| vec![f64::NAN; s.len()]).collect();
        Self {
            series,
            p,
            start,
            cache,
        }
    }

    /// Log-likelihood and profiled AR coefficients; `None` if infeasible.
    fn evaluate(&mut self, tp: &TukeySiteParams) -> Option<(f64, Vec<f64>)> {
        if tp.validate().is_err() {
            return None;
        }
        let ln_omega = tp.omega.ln();
        let mut jacobian = 0.0;
        let mut n_obs = 0usize;
        for (y, z) in self.series.iter().zip(self.cache.iter_mut()) {
            for k in 0..y.len() {
                let u = (y[k] - tp.xi) / tp.omega;
                let guess = if z[k].is_finite() { z[k] } else { u };
                let v = tukey::tau_inverse_from(u, tp.g, tp.h, FIT_INVERSE_TOL, guess).ok()?;
                if !v.is_finite() {
                    return None;
                }
                z[k] = v;
                if k >= self.start {
                    jacobian -= tukey::tau_prime_unchecked(v, tp.g, tp.h).ln() + ln_omega;
                    n_obs += 1;
                }
            }
        }
        let (phi, rss) = stationary_ar(&self.cache, self.p, self.start)?;
        let ll = -0.5 * n_obs as f64 * LN_2PI - 0.5 * rss + jacobian;
        ll.is_finite().then_some((ll, phi))
    }
}

fn decode(theta: &[f64]) -> TukeySiteParams {
    let s = theta[3].sin();
    TukeySiteParams {
        xi: theta[0],
        omega: theta[1].exp(),
        g: theta[2],
        h: H_MAX * s * s,
    }
}

fn encode(tp: &TukeySiteParams) -> Vec<f64> {
    vec![
        tp.xi,
        tp.omega.ln(),
        tp.g,
        (tp.h / H_MAX).clamp(0.0, 1.0).sqrt().asin(),
    ]
}

/// Robust starting values from quantiles, rescaled so the latent innovations
/// of the initial AR fit have unit variance.
fn initial_tukey(series: &[Vec<f64>], p: usize, start: usize) -> TukeySiteParams {
    let mut all: Vec<f64> = series.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let q10 = quantile_sorted(&all, 0.1);
    let q25 = quantile_sorted(&all, 0.25);
    let q50 = quantile_sorted(&all, 0.5);
    let q75 = quantile_sorted(&all, 0.75);
    let q90 = quantile_sorted(&all, 0.9);
    let mut omega = (q75 - q25) / 1.349;
    if !(omega > 0.0) {
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        omega = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    }
    let (upper, lower) = (q90 - q50, q50 - q10);
    let mut g = if upper > 0.0 && lower > 0.0 {
        (upper / lower).ln() / 1.281_551_565_545
    } else {
        0.0
    };
    g = g.clamp(-2.0, 2.0);
    let mut tp = TukeySiteParams {
        xi: q50,
        omega,
        g,
        h: 0.05,
    };
    // rescale the latent innovations: ω τ_{g,h}(s u) = (sω) τ_{sg, s²h}(u)
    let latent: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            s.iter()
                .map(|&y| {
                    tukey::tau_inverse((y - tp.xi) / tp.omega, tp.g, tp.h, 1e-10).unwrap_or(0.0)
                })
                .collect()
        })
        .collect();
    if let Some((_, rss)) = stationary_ar(&latent, p, start) {
        let n: usize = latent.iter().map(|z| z.len() - start).sum();
        let s = (rss / n as f64).sqrt();
        if s.is_finite() && s > 0.0 {
            tp.omega *= s;
            tp.g *= s;
            tp.h = (tp.h * s * s).min(H_START_MAX);
        }
    }
    tp
}

fn bic(loglik: f64, n_params: usize, n_obs: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_obs as f64).ln()
}

/// Fits the Tukey g-and-h AR(p) model, conditioning on the first `p` values
/// of each realization.
pub fn fit_site(series: &[Vec<f64>], p: usize) -> Result<SiteFitResult> {
    fit_site_with(series, p, p, TemporalModel::TukeyAr, &FitOptions::default())
}

/// General entry point. `start ≥ p` is the first time index whose
/// conditional density enters the likelihood; using a common `start` makes
/// likelihoods of different orders comparable.
pub fn fit_site_with(
    series: &[Vec<f64>],
    p: usize,
    start: usize,
    model: TemporalModel,
    opts: &FitOptions,
) -> Result<SiteFitResult> {
    if start < p {
        return Err(SgError::Precondition(format!(
            "conditioning start {start} is below the order {p}"
        )));
    }
    let k_len = validate_series(series, start)?;
    let n_obs = series.len() * (k_len - start);
    let n_params = model.n_params(p);
    match model {
        TemporalModel::GaussianAr => {
            let (phi, rss) = stationary_ar(series, p, start)
                .ok_or_else(|| SgError::Fit("no stationary AR fit".into()))?;
            let s2 = rss / n_obs as f64;
            if !(s2 > 0.0) {
                return Err(SgError::Data("zero innovation variance".into()));
            }
            let loglik = -0.5 * n_obs as f64 * (LN_2PI + 1.0 + s2.ln());
            Ok(SiteFitResult {
                model,
                tukey: TukeySiteParams::IDENTITY,
                temporal: TemporalSiteParams::new(phi, s2.sqrt())?,
                loglik,
                bic: bic(loglik, n_params, n_obs),
                n_obs,
                n_params,
                initial_loglik: loglik,
                evals: 1,
            })
        }
        TemporalModel::TukeyAr => {
            let start_params = initial_tukey(series, p, start);
            let mut objective = TukeyObjective::new(series, p, start);
            let initial = objective.evaluate(&start_params).map(|(ll, _)| ll);
            let m = minimize(
                |theta: &[f64]| match objective.evaluate(&decode(theta)) {
                    Some((ll, _)) => -ll,
                    None => f64::INFINITY,
                },
                &encode(&start_params),
                &opts.optimizer,
            );
            if !m.value.is_finite() {
                return Err(SgError::Fit(format!(
                    "likelihood not finite anywhere along the search ({} evaluations)",
                    m.evals
                )));
            }
            let tp = decode(&m.x);
            let (loglik, phi) = objective
                .evaluate(&tp)
                .ok_or_else(|| SgError::Fit("optimum became infeasible on re-evaluation".into()))?;
            Ok(SiteFitResult {
                model,
                tukey: tp,
                temporal: TemporalSiteParams::new(phi, 1.0)?,
                loglik,
                bic: bic(loglik, n_params, n_obs),
                n_obs,
                n_params,
                initial_loglik: initial.unwrap_or(f64::NEG_INFINITY),
                evals: m.evals,
            })
        }
    }
}

/// Tukey AR fit with `g` and `h` held fixed; only `ξ` and `ω` are searched.
/// With `g = h = 0` this is a Gaussian AR(p) with a mean.
pub fn fit_site_fixed_shape(series: &[Vec<f64>], p: usize, start: usize, g: f64, h: f64) -> Result<SiteFitResult> {
    if start < p {
        return Err(SgError::Precondition(format!(
            "conditioning start {start} is below the order {p}"
        )));
    }
    TukeySiteParams::new(0.0, 1.0, g, h)?;
    let k_len = validate_series(series, start)?;
    let n_obs = series.len() * (k_len - start);
    let init = initial_tukey(series, p, start);
    let mut objective = TukeyObjective::new(series, p, start);
    let at = |t: &[f64]| TukeySiteParams {
        xi: t[0],
        omega: t[1].exp(),
        g,
        h,
    };
    let initial = objective.evaluate(&at(&[init.xi, init.omega.ln()])).map(|(ll, _)| ll);
    let opts = MinimizeOptions {
        max_evals: 4000,
        ftol: 1e-15,
        initial_step: 0.1,
        polish_sweeps: 4,
    };
    let m = minimize(
        |t: &[f64]| objective.evaluate(&at(t)).map_or(f64::INFINITY, |(ll, _)| -ll),
        &[init.xi, init.omega.ln()],
        &opts,
    );
    let tp = at(&m.x);
    let (loglik, phi) = objective
        .evaluate(&tp)
        .ok_or_else(|| SgError::Fit("fixed-shape optimum is infeasible".into()))?;
    let n_params = 2 + p;
    Ok(SiteFitResult {
        model: TemporalModel::TukeyAr,
        tukey: tp,
        temporal: TemporalSiteParams::new(phi, 1.0)?,
        loglik,
        bic: bic(loglik, n_params, n_obs),
        n_obs,
        n_params,
        initial_loglik: initial.unwrap_or(f64::NEG_INFINITY),
        evals: m.evals,
    })
}

/// Fits every order `0..=p_max` on the common sample `k ≥ p_max` and returns
/// the fit with the smallest BIC (ties go to the smaller order).
pub fn select_and_fit(series: &[Vec<f64>], p_max: usize, model: TemporalModel) -> Result<SiteFitResult> {
    let opts = FitOptions::default();
    let mut best: Option<SiteFitResult> = None;
    let mut last_err = None;
    for p in 0..=p_max {
        match fit_site_with(series, p, p_max, model, &opts) {
            Ok(fit) => {
                if best.as_ref().map_or(true, |b| fit.bic < b.bic) {
                    best = Some(fit);
                }
            }
            Err(e @ (SgError::Data(_) | SgError::Precondition(_) | SgError::Structure(_))) => {
                return Err(e)
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        SgError::Fit(format!(
            "every order up to {p_max} failed: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))
    })
}

/// BIC-optimal order of the Tukey AR model.
pub fn select_order(series: &[Vec<f64>], p_max: usize) -> Result<usize> {
    Ok(select_and_fit(series, p_max, TemporalModel::TukeyAr)?.temporal.p)
}

/// Standardized innovations `(ẑ_k - Σ φ_j ẑ_{k-j}) / S` for `k ≥ p`; one
/// sequence of length `K - p` per realization.
pub fn residuals(series: &[Vec<f64>], fit: &SiteFitResult) -> Result<Vec<Vec<f64>>> {
    let tp = &fit.tukey;
    let t = &fit.temporal;
    tp.validate()?;
    t.validate()?;
    series
        .iter()
        .map(|y| {
            if y.len() <= t.p {
                return Err(SgError::Precondition("series shorter than the AR order".into()));
            }
            let z = y
                .iter()
                .map(|&v| tukey::tau_inverse((v - tp.xi) / tp.omega, tp.g, tp.h, tukey::DEFAULT_INVERSE_TOL))
                .collect::<Result<Vec<f64>>>()?;
            Ok((t.p..z.len())
                .map(|k| {
                    let mut e = z[k];
                    for (j, f) in t.phi.iter().enumerate() {
                        e -= f * z[k - 1 - j];
                    }
                    e / t.s
                })
                .collect())
        })
        .collect()
}

/// `BIC(G-AR) − BIC(TGH-AR)`, each at its BIC-optimal order up to `p_max`.
/// Positive values favour the Tukey model.
pub fn bic_delta_gaussian(series: &[Vec<f64>], p_max: usize) -> Result<f64> {
    let tgh = select_and_fit(series, p_max, TemporalModel::TukeyAr)?;
    let gar = select_and_fit(series, p_max, TemporalModel::GaussianAr)?;
    Ok(gar.bic - tgh.bic)
}

/// Simulates `n_real` independent realizations of length `k_len`, each
/// started from `burn_in` discarded steps from zero.
pub fn simulate_site<R: Rng + ?Sized>(
    tukey: &TukeySiteParams,
    temporal: &TemporalSiteParams,
    k_len: usize,
    n_real: usize,
    burn_in: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..n_real)
        .map(|_| {
            let mut state = vec![0.0; temporal.p];
            let mut out = Vec::with_capacity(k_len);
            for step in 0..burn_in + k_len {
                let h: f64 = rng.sample(StandardNormal);
                let mut eps = temporal.s * h;
                for (j, f) in temporal.phi.iter().enumerate() {
                    eps += f * state[j];
                }
                if temporal.p > 0 {
                    state.rotate_right(1);
                    state[0] = eps;
                }
                if step >= burn_in {
                    out.push(tukey.forward(eps));
                }
            }
            out
        })
        .collect()
}

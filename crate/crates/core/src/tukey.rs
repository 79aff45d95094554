//! Tukey g-and-h transformation.
//!
//! `τ_{g,h}(z) = g⁻¹ (e^{gz} - 1) e^{hz²/2}` (and `z e^{hz²/2}` at `g = 0`)
//! maps a standard normal variable to a skewed, heavy-tailed one. With
//! `h ≥ 0` the map is strictly increasing, so the induced density follows from
//! a change of variables through the numerical inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};

/// Largest admissible tail parameter; keeps the marginal variance finite.
pub const H_MAX: f64 = 0.45;
/// Below this `|g|` the transform is evaluated with the first-order series.
pub const G_SERIES_THRESHOLD: f64 = 1e-7;
/// Default absolute tolerance of the inverse.
pub const DEFAULT_INVERSE_TOL: f64 = 1e-12;

const MAX_INVERSE_ITER: usize = 200;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Marginal transform parameters of a single site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TukeySiteParams {
    pub xi: f64,
    pub omega: f64,
    pub g: f64,
    pub h: f64,
}

impl TukeySiteParams {
    pub const IDENTITY: TukeySiteParams = TukeySiteParams {
        xi: 0.0,
        omega: 1.0,
        g: 0.0,
        h: 0.0,
    };

    pub fn new(xi: f64, omega: f64, g: f64, h: f64) -> Result<Self> {
        let p = Self { xi, omega, g, h };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi.is_finite() && self.g.is_finite()) {
            return Err(SgError::Parameter("xi and g must be finite".into()));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(SgError::Parameter(format!("omega must be positive, got {}", self.omega)));
        }
        if !(0.0..=H_MAX).contains(&self.h) {
            return Err(SgError::Parameter(format!("h must lie in [0, {H_MAX}], got {}", self.h)));
        }
        Ok(())
    }

    /// `ξ + ω τ_{g,h}(z)`.
    #[inline]
    pub fn forward(&self, z: f64) -> f64 {
        self.xi + self.omega * tau_unchecked(z, self.g, self.h)
    }
}

fn check_h(h: f64) -> Result<()> {
    if h < 0.0 || !h.is_finite() {
        return Err(SgError::Parameter(format!("h must be non-negative, got {h}")));
    }
    Ok(())
}

/// `(e^{gz} - 1) / g`, continuous through `g = 0`.
#[inline]
fn skew_part(z: f64, g: f64) -> f64 {
    if g.abs() < G_SERIES_THRESHOLD {
        z * (1.0 + 0.5 * g * z)
    } else {
        (g * z).exp_m1() / g
    }
}

#[inline]
pub(crate) fn tau_unchecked(z: f64, g: f64, h: f64) -> f64 {
    let tail = if h == 0.0 { 1.0 } else { (0.5 * h * z * z).exp() };
    skew_part(z, g) * tail
}

#[inline]
pub(crate) fn tau_prime_unchecked(z: f64, g: f64, h: f64) -> f64 {
    let tail = if h == 0.0 { 1.0 } else { (0.5 * h * z * z).exp() };
    let egz = if g.abs() < G_SERIES_THRESHOLD {
        1.0 + g * z
    } else {
        (g * z).exp()
    };
    tail * (egz + h * z * skew_part(z, g))
}

/// Tukey g-and-h transform of `z`.
pub fn tau(z: f64, g: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    Ok(tau_unchecked(z, g, h))
}

/// Derivative of [`tau`] in `z`; strictly positive for `h ≥ 0`.
pub fn tau_prime(z: f64, g: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    Ok(tau_prime_unchecked(z, g, h))
}

/// Solves `τ_{g,h}(z) = y` for `z`.
///
/// Converges when `|τ(z) - y| ≤ tol · max(1, |y|)` or the bracket collapses
/// below `tol`.
pub fn tau_inverse(y: f64, g: f64, h: f64, tol: f64) -> Result<f64> {
    check_h(h)?;
    if !(tol > 0.0) {
        return Err(SgError::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    tau_inverse_from(y, g, h, tol, initial_guess(y, g, h))
}

/// Cheap starting point: inverts the skew part exactly and ignores the tail.
#[inline]
fn initial_guess(y: f64, g: f64, h: f64) -> f64 {
    let z = if g.abs() < G_SERIES_THRESHOLD {
        y
    } else {
        let arg = 1.0 + g * y;
        if arg > 0.0 {
            arg.ln() / g
        } else {
            // beyond the h = 0 asymptote; the bracket search takes over
            -4.0f64.copysign(g)
        }
    };
    if h > 0.0 {
        z.clamp(-12.0, 12.0)
    } else {
        z
    }
}

/// Safeguarded Newton iteration started from `guess`.
pub(crate) fn tau_inverse_from(y: f64, g: f64, h: f64, tol: f64, guess: f64) -> Result<f64> {
    if y == 0.0 {
        return Ok(0.0);
    }
    if g == 0.0 && h == 0.0 {
        return Ok(y);
    }
    let target_tol = tol * y.abs().max(1.0);
    let mut z = if guess.is_finite() { guess } else { 0.0 };
    let mut f = tau_unchecked(z, g, h) - y;
    if f.abs() <= target_tol {
        return Ok(z);
    }

    // Bracket [lo, hi] with f(lo) < 0 < f(hi); τ is increasing and τ(0) = 0.
    let (mut lo, mut hi) = if f < 0.0 { (z, f64::NAN) } else { (f64::NAN, z) };
    if y > 0.0 && lo.is_nan() {
        lo = 0.0;
    }
    if y < 0.0 && hi.is_nan() {
        hi = 0.0;
    }

    for iter in 0..MAX_INVERSE_ITER {
        let t = f + y;
        let d = tau_prime_unchecked(z, g, h);
        // Far in the tails τ grows like exp(hz²/2) and plain Newton crawls;
        // Newton on log|τ| is nearly linear there.
        let mut next = if y.abs() > 1.0 && t.signum() == y.signum() && t.is_finite() {
            z - (t / y).ln() * t / d
        } else {
            z - f / d
        };
        let inside = |v: f64| {
            (lo.is_nan() || v > lo) && (hi.is_nan() || v < hi) && v.is_finite()
        };
        if !inside(next) {
            next = match (lo.is_nan(), hi.is_nan()) {
                (false, false) => 0.5 * (lo + hi),
                (true, false) => hi - 2.0 * hi.abs().max(1.0),
                (false, true) => lo + 2.0 * lo.abs().max(1.0),
                (true, true) => unreachable!("bracket always has one finite side"),
            };
        }
        let step = (next - z).abs();
        z = next;
        f = tau_unchecked(z, g, h) - y;
        if f.abs() <= target_tol {
            return Ok(z);
        }
        if f < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        if !lo.is_nan() && !hi.is_nan() && (hi - lo) <= 4.0 * f64::EPSILON * z.abs().max(tol) {
            return Ok(z);
        }
        if step <= f64::EPSILON * z.abs().max(1e-300) && iter > 2 {
            return Ok(z);
        }
    }
    Err(SgError::NoConvergence {
        iterations: MAX_INVERSE_ITER,
        lo,
        hi,
    })
}

/// Log-density of `Y = ξ + ω τ_{g,h}(Z)`, `Z ~ N(0, 1)`, at `y`.
pub fn log_density(y: f64, params: &TukeySiteParams) -> Result<f64> {
    params.validate()?;
    let u = (y - params.xi) / params.omega;
    let z = tau_inverse(u, params.g, params.h, DEFAULT_INVERSE_TOL)?;
    Ok(-LN_SQRT_2PI - 0.5 * z * z - params.omega.ln() - tau_prime_unchecked(z, params.g, params.h).ln())
}

/// Mean, variance, skewness and excess kurtosis of `τ_{g,h}(σ Z)`, `Z ~ N(0,1)`.
///
/// Computed by trapezoidal quadrature on a wide grid; the
/// integrand decays like `exp(-(1 - 4hσ²) z²/2)`, so `hσ² < 1/4` is required
/// for the kurtosis.
pub fn latent_moments(g: f64, h: f64, sigma: f64) -> Result<[f64; 4]> {
    check_h(h)?;
    if !(sigma > 0.0) {
        return Err(SgError::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    if 4.0 * h * sigma * sigma >= 1.0 {
        return Err(SgError::Parameter(
            "fourth moment does not exist for h·σ² ≥ 1/4".into(),
        ));
    }
    let decay = 1.0 - 4.0 * h * sigma * sigma;
    let half_width = 40.0 / decay.sqrt();
    let steps = 40_000usize;
    let dz = 2.0 * half_width / steps as f64;
    let mut raw = [0.0f64; 5];
    for i in 0..=steps {
        let z = -half_width + i as f64 * dz;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        let phi = (-0.5 * z * z - LN_SQRT_2PI).exp();
        if phi == 0.0 {
            continue;
        }
        let x = tau_unchecked(sigma * z, g, h);
        let mut p = w * phi * dz;
        for r in raw.iter_mut() {
            *r += p;
            p *= x;
        }
    }
    let mean = raw[1] / raw[0];
    let m2 = raw[2] / raw[0] - mean * mean;
    let m3 = raw[3] / raw[0] - 3.0 * mean * raw[2] / raw[0] + 2.0 * mean.powi(3);
    let m4 = raw[4] / raw[0] - 4.0 * mean * raw[3] / raw[0] + 6.0 * mean * mean * raw[2] / raw[0]
        - 3.0 * mean.powi(4);
    Ok([mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0])
}

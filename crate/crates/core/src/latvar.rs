//! First-order vector autoregression across latitude on the spectral
//! coefficients (third inference stage).
//!
//! `H̃_m = Φ_m H̃_{m-1} + e_m` with a circular tridiagonal `Φ_m` whose
//! diagonal is the coherence `φ(c)` and whose off-diagonals couple
//! neighbouring wavenumbers with weights `a (1-φ)/2` and `b (1-φ)/2`.
//! `a` couples toward the neighbour with smaller `|k|` (signed frequency
//! `k = c` or `c - N`) and `b` toward the larger one, which keeps the update
//! Hermitian. Innovations are independent with variance `1 - φ(c)²`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::optim::{minimize, MinimizeOptions};
use crate::spectrum::SpectralCoeffs;

/// Largest coherence scale actually used; keeps the diagonal strictly
/// dominant.
pub const ZETA_MAX: f64 = 1.0 - 1e-6;
/// Minimum time steps per block in the block-averaged fit.
pub const MIN_BLOCK_LEN: usize = 12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatVarParams {
    pub a: f64,
    pub b: f64,
    pub zeta: f64,
    pub eta: f64,
}

impl LatVarParams {
    /// No coupling and no coherence: independent unit-variance bands.
    pub const INDEPENDENT: Self = Self {
        a: 0.0,
        b: 0.0,
        zeta: 0.0,
        eta: 1.0,
    };

    pub fn new(a: f64, b: f64, zeta: f64, eta: f64) -> Result<Self> {
        let p = Self { a, b, zeta, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.abs() < 1.0) || !(self.b.abs() < 1.0) {
            return Err(SgError::Parameter(format!(
                "coupling coefficients must lie in (-1, 1), got a={} b={}",
                self.a, self.b
            )));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(SgError::Parameter(format!("zeta must lie in [0, 1], got {}", self.zeta)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(SgError::Parameter(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

/// `φ(c) = ζ {1 + 4 sin²(cπ/N)}^{-η}`, with `ζ` clamped to [`ZETA_MAX`].
pub fn coherence(c: usize, zeta: f64, eta: f64, n: usize) -> f64 {
    let c = c % n.max(1);
    let c = c.min(n - c);
    let s = (c as f64 * PI / n as f64).sin();
    zeta.min(ZETA_MAX) * (1.0 + 4.0 * s * s).powf(-eta)
}

/// Wavenumber carried by packed coordinate `j`.
#[inline]
pub fn packed_wavenumber(j: usize) -> usize {
    (j + 1) / 2
}

/// Circular tridiagonal transition in wavenumber index space.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub n: usize,
    pub diag: Vec<f64>,
    /// Coefficient on `H̃(c-1)` in row `c`.
    pub lower: Vec<f64>,
    /// Coefficient on `H̃(c+1)` in row `c`.
    pub upper: Vec<f64>,
}

impl Transition {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for c in 0..n {
            m[(c, c)] += self.diag[c];
            m[(c, (c + n - 1) % n)] += self.lower[c];
            m[(c, (c + 1) % n)] += self.upper[c];
        }
        m
    }

    /// Largest Gershgorin row sum `|diag| + |lower| + |upper|`.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.n)
            .map(|c| self.diag[c].abs() + self.lower[c].abs() + self.upper[c].abs())
            .fold(0.0, f64::max)
    }

    /// Banded product `Φ H̃`.
    pub fn apply(&self, h: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        (0..n)
            .map(|c| self.diag[c] * h[c] + self.lower[c] * h[(c + n - 1) % n] + self.upper[c] * h[(c + 1) % n])
            .collect()
    }

    /// The same operator acting on packed real coordinates, stored by rows.
    pub fn packed(&self) -> PackedOperator {
        let n = self.n;
        let mut rows = vec![Vec::new(); n];
        let mut unit = vec![0.0; n];
        for col in 0..n {
            unit.fill(0.0);
            unit[col] = 1.0;
            let out = SpectralCoeffs(self.apply(&SpectralCoeffs::from_packed(&unit).0)).to_packed();
            for (row, v) in out.into_iter().enumerate() {
                if v.abs() > 1e-15 {
                    rows[row].push((col, v));
                }
            }
        }
        PackedOperator { n, rows }
    }
}

/// Sparse real operator on packed spectral coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedOperator {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl PackedOperator {
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, v)| v * u[j]).sum();
        }
    }
}

/// Builds `Φ` for `N` wavenumbers.
pub fn build_transition(params: &LatVarParams, n: usize) -> Result<Transition> {
    params.validate()?;
    if n == 0 {
        return Err(SgError::Structure("transition needs at least one wavenumber".into()));
    }
    let even = n % 2 == 0;
    let mut t = Transition {
        n,
        diag: vec![0.0; n],
        lower: vec![0.0; n],
        upper: vec![0.0; n],
    };
    for c in 0..n {
        let phi = coherence(c, params.zeta, params.eta, n);
        let k = if 2 * c <= n { c as i64 } else { c as i64 - n as i64 };
        let nyquist = even && 2 * c == n;
        let off = (1.0 - phi) / 2.0;
        t.diag[c] = phi;
        t.lower[c] = if k > 0 { params.a } else { params.b } * off;
        t.upper[c] = if k < 0 || nyquist { params.a } else { params.b } * off;
    }
    Ok(t)
}

/// Diagonal of the innovation covariance, `1 - φ(c)²`.
pub fn innovation_covariance(params: &LatVarParams, n: usize) -> Result<Vec<f64>> {
    params.validate()?;
    Ok((0..n)
        .map(|c| {
            let phi = coherence(c, params.zeta, params.eta, n);
            1.0 - phi * phi
        })
        .collect())
}

/// Innovation standard deviation for each packed coordinate.
pub fn packed_innovation_sd(params: &LatVarParams, n: usize) -> Result<Vec<f64>> {
    let var = innovation_covariance(params, n)?;
    Ok((0..n).map(|j| var[packed_wavenumber(j)].sqrt()).collect())
}

/// One latitude step `Φ H̃_{m-1} + e`.
pub fn propagate(prev: &SpectralCoeffs, params: &LatVarParams, innovation: &SpectralCoeffs) -> Result<SpectralCoeffs> {
    let n = prev.len();
    if innovation.len() != n {
        return Err(SgError::Structure("innovation length differs from the band".into()));
    }
    prev.check_hermitian(1e-12)?;
    innovation.check_hermitian(1e-12)?;
    let t = build_transition(params, n)?;
    let mut out = t.apply(&prev.0);
    for (o, e) in out.iter_mut().zip(&innovation.0) {
        *o += e;
    }
    Ok(SpectralCoeffs(out))
}

/// Packed spectral coefficients of one band for every `(run, time)`,
/// stored run-major: `values[((r * K) + k) * N + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStack {
    pub n_lon: usize,
    pub n_time: usize,
    pub n_real: usize,
    pub values: Vec<f64>,
}

impl SpectralStack {
    pub fn zeros(n_lon: usize, n_time: usize, n_real: usize) -> Self {
        Self {
            n_lon,
            n_time,
            n_real,
            values: vec![0.0; n_lon * n_time * n_real],
        }
    }

    pub fn vector(&self, r: usize, k: usize) -> &[f64] {
        let o = (r * self.n_time + k) * self.n_lon;
        &self.values[o..o + self.n_lon]
    }

    pub fn vector_mut(&mut self, r: usize, k: usize) -> &mut [f64] {
        let o = (r * self.n_time + k) * self.n_lon;
        &mut self.values[o..o + self.n_lon]
    }
}

/// Independent `(run, time)` draws of the latitude recursion: band 0 is
/// standard normal and band `m` is `P_m u_{m-1}` plus innovations, with
/// `latvar[m]` for `m ≥ 1` (`latvar[0]` is ignored).
pub fn simulate_stacks(latvar: &[LatVarParams], n_lon: usize, n_time: usize, n_real: usize, seed: u64) -> Result<Vec<SpectralStack>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stacks: Vec<SpectralStack> = Vec::with_capacity(latvar.len());
    for (m, params) in latvar.iter().enumerate() {
        let mut s = SpectralStack::zeros(n_lon, n_time, n_real);
        if m == 0 {
            s.values.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        } else {
            let op = build_transition(params, n_lon)?.packed();
            let sd = packed_innovation_sd(params, n_lon)?;
            let prev = &stacks[m - 1];
            for r in 0..n_real {
                for k in 0..n_time {
                    let out = s.vector_mut(r, k);
                    op.apply_into(prev.vector(r, k), out);
                    for (v, d) in out.iter_mut().zip(&sd) {
                        *v += d * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
        stacks.push(s);
    }
    Ok(stacks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatSubModel {
    /// Coupled wavenumbers (`a`, `b` free).
    Full,
    /// Per-wavenumber autoregression, `a = b = 0`.
    Arl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub k_start: usize,
    pub k_end: usize,
    pub params: LatVarParams,
    pub loglik: f64,
    /// Maximized log-likelihood with `a = b = 0` on the same block.
    pub arl_loglik: f64,
}

/// Fitted latitude parameters of one band (band 0 carries the fixed
/// independent start and no block estimates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatBandFit {
    pub lat_index: usize,
    pub a: f64,
    pub b: f64,
    pub zeta: f64,
    pub eta: f64,
    pub sub_model: LatSubModel,
    /// Sum of the per-block maximized conditional log-likelihoods.
    pub loglik: f64,
    /// Same sum for the uncoupled (`a = b = 0`) model.
    pub arl_loglik: f64,
    pub per_block_estimates: Vec<BlockEstimate>,
}

impl LatBandFit {
    pub fn params(&self) -> LatVarParams {
        LatVarParams {
            a: self.a,
            b: self.b,
            zeta: self.zeta,
            eta: self.eta,
        }
    }
}

/// Per-row cross products `Σ z zᵀ` with `z = (u_m[j], u_{m-1}[cols])`.
struct PairStats {
    n: usize,
    cols: Vec<Vec<usize>>,
    gram: Vec<DMatrix<f64>>,
    count: usize,
}

fn sparsity(n: usize) -> Vec<Vec<usize>> {
    let probe = LatVarParams {
        a: 0.5,
        b: 0.5,
        zeta: 0.5,
        eta: 1.0,
    };
    build_transition(&probe, n)
        .expect("valid probe")
        .packed()
        .rows
        .into_iter()
        .map(|r| r.into_iter().map(|(j, _)| j).collect())
        .collect()
}

impl PairStats {
    fn collect(prev: &SpectralStack, cur: &SpectralStack, k_range: std::ops::Range<usize>, cols: &[Vec<usize>]) -> Self {
        let n = cur.n_lon;
        let mut gram: Vec<DMatrix<f64>> = cols.iter().map(|c| DMatrix::zeros(c.len() + 1, c.len() + 1)).collect();
        let mut z = Vec::with_capacity(4);
        let mut count = 0;
        for r in 0..cur.n_real {
            for k in k_range.clone() {
                let (u0, u1) = (prev.vector(r, k), cur.vector(r, k));
                for j in 0..n {
                    z.clear();
                    z.push(u1[j]);
                    z.extend(cols[j].iter().map(|&c| u0[c]));
                    let g = &mut gram[j];
                    for a in 0..z.len() {
                        for b in 0..=a {
                            g[(a, b)] += z[a] * z[b];
                        }
                    }
                }
                count += 1;
            }
        }
        for g in &mut gram {
            for a in 0..g.nrows() {
                for b in 0..a {
                    g[(b, a)] = g[(a, b)];
                }
            }
        }
        Self {
            n,
            cols: cols.to_vec(),
            gram,
            count,
        }
    }

    fn loglik(&self, params: &LatVarParams) -> Option<f64> {
        let op = build_transition(params, self.n).ok()?.packed();
        let sd = packed_innovation_sd(params, self.n).ok()?;
        let mut total = 0.0;
        let mut w = Vec::with_capacity(4);
        for j in 0..self.n {
            w.clear();
            w.push(1.0);
            w.extend(self.cols[j].iter().map(|&c| {
                -op.rows[j].iter().find(|(col, _)| *col == c).map_or(0.0, |&(_, v)| v)
            }));
            let g = &self.gram[j];
            let mut ss = 0.0;
            for a in 0..w.len() {
                for b in 0..w.len() {
                    ss += w[a] * g[(a, b)] * w[b];
                }
            }
            let var = sd[j] * sd[j];
            total += self.count as f64 * (LN_2PI + var.ln()) + ss / var;
        }
        let ll = -0.5 * total;
        ll.is_finite().then_some(ll)
    }
}

fn decode(x: &[f64], sub_model: LatSubModel) -> LatVarParams {
    let logistic = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (zeta, eta) = (ZETA_MAX * logistic(x[0]), x[1].exp());
    match sub_model {
        LatSubModel::Arl => LatVarParams {
            a: 0.0,
            b: 0.0,
            zeta,
            eta,
        },
        LatSubModel::Full => LatVarParams {
            a: x[2].tanh(),
            b: x[3].tanh(),
            zeta,
            eta,
        },
    }
}

fn encode(p: &LatVarParams, sub_model: LatSubModel) -> Vec<f64> {
    let z = (p.zeta / ZETA_MAX).clamp(1e-9, 1.0 - 1e-9);
    let mut x = vec![(z / (1.0 - z)).ln(), p.eta.ln()];
    if sub_model == LatSubModel::Full {
        x.push(p.a.clamp(-0.999_999, 0.999_999).atanh());
        x.push(p.b.clamp(-0.999_999, 0.999_999).atanh());
    }
    x
}

fn fit_pair(stats: &PairStats, sub_model: LatSubModel) -> (LatVarParams, f64, f64) {
    let opts = MinimizeOptions {
        max_evals: 1500,
        ftol: 1e-12,
        initial_step: 0.3,
        polish_sweeps: 2,
    };
    let run = |start: &LatVarParams, model: LatSubModel| {
        let m = minimize(
            |x: &[f64]| stats.loglik(&decode(x, model)).map_or(f64::INFINITY, |v| -v),
            &encode(start, model),
            &opts,
        );
        (decode(&m.x, model), -m.value)
    };
    let start = LatVarParams {
        a: 0.0,
        b: 0.0,
        zeta: 0.5,
        eta: 1.0,
    };
    let (arl, arl_ll) = run(&start, LatSubModel::Arl);
    match sub_model {
        LatSubModel::Arl => (arl, arl_ll, arl_ll),
        LatSubModel::Full => {
            // nested start: the full optimum can only improve on the uncoupled one
            let (full, full_ll) = run(&arl, LatSubModel::Full);
            if full_ll >= arl_ll {
                (full, full_ll, arl_ll)
            } else {
                (arl, arl_ll, arl_ll)
            }
        }
    }
}

/// Block boundaries `[k_start, k_end)` splitting `k_len` time steps into
/// `n_blocks` sequential blocks of near-equal length.
pub fn block_ranges(k_len: usize, n_blocks: usize) -> Result<Vec<(usize, usize)>> {
    if n_blocks == 0 {
        return Err(SgError::Config("n_blocks must be at least 1".into()));
    }
    if k_len / n_blocks < MIN_BLOCK_LEN {
        return Err(SgError::Config(format!(
            "{k_len} time steps in {n_blocks} blocks leaves fewer than {MIN_BLOCK_LEN} per block"
        )));
    }
    Ok((0..n_blocks)
        .map(|i| (i * k_len / n_blocks, (i + 1) * k_len / n_blocks))
        .collect())
}

/// Conditional Gaussian log-likelihood of band `cur` given band `prev` over
/// time steps `k_range`, computed directly from the residuals
/// `u_m − P u_{m−1}`.
pub fn lat_pair_loglik(
    prev: &SpectralStack,
    cur: &SpectralStack,
    params: &LatVarParams,
    k_range: std::ops::Range<usize>,
) -> Result<f64> {
    if prev.n_lon != cur.n_lon || prev.n_time != cur.n_time || prev.n_real != cur.n_real {
        return Err(SgError::Structure("adjacent spectral stacks differ in shape".into()));
    }
    if k_range.end > cur.n_time {
        return Err(SgError::Parameter(format!("time range ends past {}", cur.n_time)));
    }
    let n = cur.n_lon;
    let op = build_transition(params, n)?.packed();
    let sd = packed_innovation_sd(params, n)?;
    let mut pred = vec![0.0; n];
    let mut ll = 0.0;
    for r in 0..cur.n_real {
        for k in k_range.clone() {
            op.apply_into(prev.vector(r, k), &mut pred);
            for (j, (&u, &p)) in cur.vector(r, k).iter().zip(&pred).enumerate() {
                let e = (u - p) / sd[j];
                ll -= 0.5 * (LN_2PI + e * e) + sd[j].ln();
            }
        }
    }
    Ok(ll)
}

/// Fits band `m` given band `m-1` on each time block and averages the
/// block estimates.
pub fn fit_lat_pair(
    prev: &SpectralStack,
    cur: &SpectralStack,
    sub_model: LatSubModel,
    n_blocks: usize,
    lat_index: usize,
) -> Result<LatBandFit> {
    if prev.n_lon != cur.n_lon || prev.n_time != cur.n_time || prev.n_real != cur.n_real {
        return Err(SgError::Structure("adjacent spectral stacks differ in shape".into()));
    }
    let ranges = block_ranges(cur.n_time, n_blocks)?;
    let cols = sparsity(cur.n_lon);
    let blocks: Vec<BlockEstimate> = ranges
        .iter()
        .map(|&(k0, k1)| {
            let stats = PairStats::collect(prev, cur, k0..k1, &cols);
            let (params, loglik, arl_loglik) = fit_pair(&stats, sub_model);
            BlockEstimate {
                k_start: k0,
                k_end: k1,
                params,
                loglik,
                arl_loglik,
            }
        })
        .collect();
    if blocks.iter().any(|b| !b.loglik.is_finite()) {
        return Err(SgError::Fit(format!("latitude fit failed at band {lat_index}")));
    }
    let nb = blocks.len() as f64;
    let mean = |f: fn(&LatVarParams) -> f64| blocks.iter().map(|b| f(&b.params)).sum::<f64>() / nb;
    Ok(LatBandFit {
        lat_index,
        a: mean(|p| p.a),
        b: mean(|p| p.b),
        zeta: mean(|p| p.zeta),
        eta: mean(|p| p.eta),
        sub_model,
        loglik: blocks.iter().map(|b| b.loglik).sum(),
        arl_loglik: blocks.iter().map(|b| b.arl_loglik).sum(),
        per_block_estimates: blocks,
    })
}

/// Fits every band south to north. Band 0 has no southern neighbour and
/// keeps [`LatVarParams::INDEPENDENT`].
pub fn fit_lat(stacks: &[SpectralStack], sub_model: LatSubModel, n_blocks: usize) -> Result<Vec<LatBandFit>> {
    use rayon::prelude::*;
    if stacks.is_empty() {
        return Err(SgError::Structure("no bands to fit".into()));
    }
    block_ranges(stacks[0].n_time, n_blocks)?;
    let first = LatBandFit {
        lat_index: 0,
        a: 0.0,
        b: 0.0,
        zeta: 0.0,
        eta: 1.0,
        sub_model,
        loglik: 0.0,
        arl_loglik: 0.0,
        per_block_estimates: vec![],
    };
    let rest: Vec<LatBandFit> = (1..stacks.len())
        .into_par_iter()
        .map(|m| fit_lat_pair(&stacks[m - 1], &stacks[m], sub_model, n_blocks, m))
        .collect::<Result<_>>()?;
    Ok(std::iter::once(first).chain(rest).collect())
}

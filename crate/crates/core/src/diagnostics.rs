//! Validation metrics: moment tests, contrast variances, normalized
//! likelihood differences, trends and structural similarity.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::grid::{EnsembleField, GridSpec};
use crate::surrogate::{generate_residuals, ModelBundle};

/// One value per site; `None` marks sites where the metric is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMap {
    pub spec: GridSpec,
    pub values: Vec<Option<f64>>,
}

impl MetricMap {
    pub fn new(n_lat: usize, n_lon: usize, values: Vec<Option<f64>>) -> Result<Self> {
        let spec = GridSpec::regular(n_lat, n_lon, 1, 1)?;
        if values.len() != n_lat * n_lon {
            return Err(SgError::Structure(format!(
                "{} metric values for {} sites",
                values.len(),
                n_lat * n_lon
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn n_lat(&self) -> usize {
        self.spec.n_lat()
    }

    pub fn n_lon(&self) -> usize {
        self.spec.n_lon()
    }

    pub fn get(&self, m: usize, n: usize) -> Option<f64> {
        self.values[m * self.n_lon() + n]
    }

    /// Present values in row-major order.
    pub fn present(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// `lat_index,lon_index,value`; missing values are left empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lat_index", "lon_index", "value"])?;
        for m in 0..self.n_lat() {
            for n in 0..self.n_lon() {
                let v = self.get(m, n).map(|v| format!("{v:.17e}")).unwrap_or_default();
                w.write_record([m.to_string(), n.to_string(), v])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTest {
    pub skewness: f64,
    /// Excess kurtosis.
    pub kurtosis: f64,
    pub z_skew: f64,
    pub z_kurt: f64,
}

/// Sample skewness and excess kurtosis with the asymptotic standard errors
/// `√(6/K)` and `√(24/K)`.
pub fn moment_tests(series: &[f64]) -> Result<MomentTest> {
    let k = series.len();
    if k < 30 {
        return Err(SgError::Precondition(format!("moment tests need at least 30 values, got {k}")));
    }
    let n = k as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in series {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if !(m2 > 1e-300) {
        return Err(SgError::Data("constant series has no moments".into()));
    }
    let skewness = m3 / m2.powf(1.5);
    let kurtosis = m4 / (m2 * m2) - 3.0;
    Ok(MomentTest {
        skewness,
        kurtosis,
        z_skew: skewness / (6.0 / n).sqrt(),
        z_kurt: kurtosis / (24.0 / n).sqrt(),
    })
}

/// Moment tests per site, pooling every realization's series.
pub fn site_moment_tests(field: &EnsembleField) -> Result<Vec<MomentTest>> {
    let spec = &field.spec;
    let (m_len, n_len) = (spec.n_lat(), spec.n_lon());
    (0..m_len * n_len)
        .into_par_iter()
        .map(|site| {
            let series: Vec<f64> = field.site_ensemble(site / n_len, site % n_len).concat();
            moment_tests(&series)
        })
        .collect()
}

/// East-west and north-south contrast variances, averaged over time and
/// realizations. East-west wraps in longitude; north-south is missing for
/// the southmost band.
pub fn contrast_variances(h: &EnsembleField) -> Result<(MetricMap, MetricMap)> {
    let spec = &h.spec;
    let (r_len, k_len, m_len, n_len) = (spec.n_real, spec.n_time(), spec.n_lat(), spec.n_lon());
    let count = (r_len * k_len) as f64;
    let mut ew = vec![0.0; m_len * n_len];
    let mut ns = vec![0.0; m_len * n_len];
    for r in 0..r_len {
        for k in 0..k_len {
            for m in 0..m_len {
                let row = h.row(r, k, m);
                for n in 0..n_len {
                    let d = row[n] - row[(n + n_len - 1) % n_len];
                    ew[m * n_len + n] += d * d;
                }
                if m > 0 {
                    let below = h.row(r, k, m - 1);
                    for n in 0..n_len {
                        let d = row[n] - below[n];
                        ns[m * n_len + n] += d * d;
                    }
                }
            }
        }
    }
    let ew = ew.into_iter().map(|v| Some(v / count)).collect();
    let ns = ns
        .into_iter()
        .enumerate()
        .map(|(i, v)| (i >= n_len).then_some(v / count))
        .collect();
    Ok((MetricMap::new(m_len, n_len, ew)?, MetricMap::new(m_len, n_len, ns)?))
}

/// Model-implied contrast variances from `n_sims` simulated innovation fields.
pub fn model_contrast_variances(bundle: &ModelBundle, n_sims: usize) -> Result<(MetricMap, MetricMap)> {
    if n_sims < 10 {
        return Err(SgError::Config(format!("n_sims must be at least 10, got {n_sims}")));
    }
    contrast_variances(&generate_residuals(bundle, n_sims)?)
}

/// Per-site squared differences `(a - b)²`; missing where either is.
pub fn squared_distance(a: &MetricMap, b: &MetricMap) -> Result<MetricMap> {
    if a.n_lat() != b.n_lat() || a.n_lon() != b.n_lon() {
        return Err(SgError::Structure("metric maps differ in shape".into()));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| Some((x.as_ref()? - y.as_ref()?).powi(2)))
        .collect();
    MetricMap::new(a.n_lat(), a.n_lon(), values)
}

/// Linear-interpolation sample quantiles (the common "type 7" rule).
pub fn percentiles(values: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(SgError::Data("no values to summarize".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    probs
        .iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(SgError::Parameter(format!("probability {p} outside [0, 1]")));
            }
            let h = (sorted.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
        })
        .collect()
}

/// Percentiles of a metric over the sites in `lat_range × lon_range`
/// (half-open index ranges), skipping missing values.
pub fn region_percentiles(
    map: &MetricMap,
    lat_range: std::ops::Range<usize>,
    lon_range: std::ops::Range<usize>,
    probs: &[f64],
) -> Result<Vec<f64>> {
    if lat_range.end > map.n_lat() || lon_range.end > map.n_lon() {
        return Err(SgError::Parameter("region exceeds the map".into()));
    }
    let values: Vec<f64> = lat_range
        .flat_map(|m| lon_range.clone().filter_map(move |n| map.get(m, n)))
        .collect();
    percentiles(&values, probs)
}

/// `(loglik_b - loglik_a) / (N M K (R - 1))`.
pub fn normalized_loglik_delta(loglik_a: f64, loglik_b: f64, n: usize, m: usize, k: usize, r: usize) -> f64 {
    (loglik_b - loglik_a) / (n as f64 * m as f64 * k as f64 * (r as f64 - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaClass {
    Small,
    /// Above 0.01.
    Modest,
    /// Above 0.1.
    Large,
}

pub fn classify_delta(delta: f64) -> DeltaClass {
    let a = delta.abs();
    if a > 0.1 {
        DeltaClass::Large
    } else if a > 0.01 {
        DeltaClass::Modest
    } else {
        DeltaClass::Small
    }
}

/// Ordinary least-squares slope of `y` against `0, 1, ...`.
pub fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let tbar = (n - 1.0) / 2.0;
    let ybar = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in y.iter().enumerate() {
        let dt = t as f64 - tbar;
        sxy += dt * (v - ybar);
        sxx += dt * dt;
    }
    sxy / sxx
}

/// Per-site OLS slope over time steps `k_start..k_end`, one map per
/// realization.
pub fn near_future_trend(field: &EnsembleField, k_start: usize, k_end: usize) -> Result<Vec<MetricMap>> {
    let spec = &field.spec;
    if k_end > spec.n_time() || k_start >= k_end {
        return Err(SgError::Parameter(format!(
            "window {k_start}..{k_end} outside 0..{}",
            spec.n_time()
        )));
    }
    if k_end - k_start < 24 {
        return Err(SgError::Precondition("trend window must span at least 24 steps".into()));
    }
    let (m_len, n_len) = (spec.n_lat(), spec.n_lon());
    (0..spec.n_real)
        .map(|r| {
            let values = (0..m_len * n_len)
                .map(|site| {
                    let (m, n) = (site / n_len, site % n_len);
                    let y: Vec<f64> = (k_start..k_end).map(|k| field.get(r, k, m, n)).collect();
                    Some(ols_slope(&y))
                })
                .collect();
            MetricMap::new(m_len, n_len, values)
        })
        .collect()
}

/// Mean structural similarity over all `w × w` windows (the whole map when
/// it is smaller than the window). Constants use the value range of `a`.
pub fn ssim(a: &MetricMap, b: &MetricMap, window: usize) -> Result<f64> {
    if a.n_lat() != b.n_lat() || a.n_lon() != b.n_lon() {
        return Err(SgError::Structure("maps differ in shape".into()));
    }
    if window == 0 {
        return Err(SgError::Parameter("window must be positive".into()));
    }
    let xa: Vec<f64> = a.values.iter().map(|v| v.ok_or_else(|| SgError::Data("missing value in map".into()))).collect::<Result<_>>()?;
    let xb: Vec<f64> = b.values.iter().map(|v| v.ok_or_else(|| SgError::Data("missing value in map".into()))).collect::<Result<_>>()?;
    let (rows, cols) = (a.n_lat(), a.n_lon());
    let lo = xa.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(SgError::Data("first map is constant".into()));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (wr, wc) = (window.min(rows), window.min(cols));
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=rows - wr {
        for j0 in 0..=cols - wc {
            let cells = || (i0..i0 + wr).flat_map(move |i| (j0..j0 + wc).map(move |j| i * cols + j));
            let n = (wr * wc) as f64;
            let ma = cells().map(|c| xa[c]).sum::<f64>() / n;
            let mb = cells().map(|c| xb[c]).sum::<f64>() / n;
            let cov = |x: &[f64], mx: f64, y: &[f64], my: f64| cells().map(|c| (x[c] - mx) * (y[c] - my)).sum::<f64>() / n;
            let (va, vb, vab) = (cov(&xa, ma, &xa, ma), cov(&xb, mb, &xb, mb), cov(&xa, ma, &xb, mb));
            total += (2.0 * ma * mb + c1) * (2.0 * vab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Writes a short text summary of named scalar diagnostics.
pub fn write_summary(path: impl AsRef<Path>, entries: &[(String, f64)]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for (k, v) in entries {
        writeln!(f, "{k}\t{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Exp1, StandardNormal};

    fn field_from(k: usize, m: usize, n: usize, r: usize, f: impl FnMut(usize) -> f64) -> EnsembleField {
        let spec = GridSpec::regular(m, n, k, r).unwrap();
        let values = (0..spec.len()).map(f).collect();
        EnsembleField::new(spec, "x", values).unwrap()
    }

    #[test]
    fn symmetric_two_point_series_has_zero_skew() {
        let s: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(moment_tests(&s).unwrap().skewness, 0.0);
        assert!(matches!(moment_tests(&[3.0; 40]), Err(SgError::Data(_))));
        assert!(moment_tests(&[1.0; 10]).is_err());
    }

    #[test]
    fn normal_and_exponential_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut inside = 0;
        for _ in 0..1000 {
            let s: Vec<f64> = (0..1140).map(|_| rng.sample(StandardNormal)).collect();
            if moment_tests(&s).unwrap().z_skew.abs() < 3.0 {
                inside += 1;
            }
        }
        assert!(inside >= 990, "{inside}");
        let s: Vec<f64> = (0..1140).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let t = moment_tests(&s).unwrap();
        assert!((t.skewness - 2.0).abs() < 3.0 * (6.0f64 / 1140.0).sqrt(), "{}", t.skewness);
    }

    #[test]
    fn contrast_variance_cases() {
        let constant_lon = field_from(20, 3, 6, 2, |i| (i / 6) as f64 * 0.37);
        let (ew, ns) = contrast_variances(&constant_lon).unwrap();
        assert!(ew.values.iter().all(|v| *v == Some(0.0)));
        assert!(ns.values[..6].iter().all(|v| v.is_none()));
        let alternating = field_from(10, 1, 4, 1, |i| if i % 2 == 0 { 1.0 } else { -1.0 });
        let (ew, _) = contrast_variances(&alternating).unwrap();
        assert!(ew.values.iter().all(|v| *v == Some(4.0)));
    }

    #[test]
    fn percentiles_match_type7() {
        let v = [1.0, 2.0, 3.0, 4.0, 10.0];
        assert_eq!(percentiles(&v, &[0.0, 0.5, 1.0]).unwrap(), vec![1.0, 3.0, 10.0]);
        assert!((percentiles(&v, &[0.9]).unwrap()[0] - 7.6).abs() < 1e-12);
        assert!((percentiles(&v, &[0.25]).unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loglik_delta_algebra() {
        assert_eq!(normalized_loglik_delta(5.0, 5.0, 1, 2, 3, 4), 0.0);
        let a = normalized_loglik_delta(1.0, 9.0, 4, 2, 10, 3);
        assert_eq!(normalized_loglik_delta(9.0, 1.0, 4, 2, 10, 3), -a);
        assert!((normalized_loglik_delta(1.0, 9.0, 4, 2, 20, 3) - a / 2.0).abs() < 1e-15);
        assert_eq!(classify_delta(0.0443), DeltaClass::Modest);
        assert_eq!(classify_delta(0.2), DeltaClass::Large);
        assert_eq!(classify_delta(0.001), DeltaClass::Small);
    }

    #[test]
    fn trend_cases() {
        let y: Vec<f64> = (0..50).map(|t| 0.3 * t as f64 - 2.0).collect();
        assert!((ols_slope(&y) - 0.3).abs() < 1e-12);
        let shifted: Vec<f64> = y.iter().map(|v| v + 100.0).collect();
        assert!((ols_slope(&shifted) - ols_slope(&y)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..408).map(|_| rng.sample(StandardNormal)).collect();
        let se = (12.0 / (408.0f64 * (408.0 * 408.0 - 1.0))).sqrt();
        assert!(ols_slope(&noise).abs() < 3.0 * se);
        let f = field_from(30, 1, 2, 1, |i| (i / 2) as f64 * 1.5);
        assert!(near_future_trend(&f, 0, 10).is_err());
        assert!(near_future_trend(&f, 0, 31).is_err());
        let maps = near_future_trend(&f, 2, 30).unwrap();
        assert!((maps[0].get(0, 1).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ssim_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Option<f64>> = (0..400).map(|_| Some(rng.sample(StandardNormal))).collect();
        let ma = MetricMap::new(20, 20, a.clone()).unwrap();
        assert_eq!(ssim(&ma, &ma, 8).unwrap(), 1.0);
        // checkerboard: every 8x8 window has zero mean
        let board: Vec<Option<f64>> = (0..400).map(|i| Some(if (i / 20 + i % 20) % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let mb = MetricMap::new(20, 20, board.clone()).unwrap();
        let neg = MetricMap::new(20, 20, board.iter().map(|v| v.map(|x| -x)).collect()).unwrap();
        assert!(ssim(&mb, &neg, 8).unwrap() < 0.0);
        let other = MetricMap::new(20, 20, (0..400).map(|_| Some(rng.sample(StandardNormal))).collect()).unwrap();
        assert!(ssim(&ma, &other, 8).unwrap().abs() < 0.1);
        let small = MetricMap::new(2, 2, vec![Some(1.0); 4]).unwrap();
        assert!(ssim(&ma, &small, 8).is_err());
    }
}

//! Gridded ensemble storage: geometry, the four-dimensional field container,
//! land/ocean/mountain masks, ensemble statistics and temporal smoothing of the
//! ensemble mean.
//!
//! Values are laid out `(realization, time, lat, lon)` in row-major order, the
//! same order used by the on-disk container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};

const MAGIC: &[u8; 8] = b"TGHSGFLD";
const FORMAT_VERSION: u32 = 1;
/// Altitude above which a land site is classed as high mountain (metres).
pub const MOUNTAIN_THRESHOLD_M: f64 = 1000.0;

/// Grid geometry shared by every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_real: usize,
    /// Latitude of each band in degrees, strictly monotone.
    pub lat_values: Vec<f64>,
    /// Longitudes in degrees, equally spaced around the full circle.
    pub lon_values: Vec<f64>,
    /// Year-month stamps, one per time step.
    pub time_labels: Vec<String>,
}

impl GridSpec {
    pub fn new(
        n_real: usize,
        lat_values: Vec<f64>,
        lon_values: Vec<f64>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        let spec = Self {
            n_real,
            lat_values,
            lon_values,
            time_labels,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Bands evenly spread over 62°S..62°N, longitudes on a regular circle and
    /// monthly stamps starting January 2006.
    pub fn regular(n_lat: usize, n_lon: usize, n_time: usize, n_real: usize) -> Result<Self> {
        let lat_values = if n_lat == 1 {
            vec![0.0]
        } else {
            (0..n_lat)
                .map(|m| -62.0 + 124.0 * m as f64 / (n_lat - 1) as f64)
                .collect()
        };
        let lon_values = (0..n_lon).map(|n| 360.0 * n as f64 / n_lon as f64).collect();
        let time_labels = (0..n_time).map(month_label).collect();
        Self::new(n_real, lat_values, lon_values, time_labels)
    }

    pub fn n_lat(&self) -> usize {
        self.lat_values.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lon_values.len()
    }

    pub fn n_time(&self) -> usize {
        self.time_labels.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_lat() * self.n_lon()
    }

    /// Total number of values, `None` on overflow.
    pub fn len_checked(&self) -> Option<usize> {
        self.n_real
            .checked_mul(self.n_time())?
            .checked_mul(self.n_lat())?
            .checked_mul(self.n_lon())
    }

    pub fn len(&self) -> usize {
        self.n_real * self.n_time() * self.n_lat() * self.n_lon()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same geometry with a different number of realizations.
    pub fn with_real(&self, n_real: usize) -> Self {
        Self {
            n_real,
            ..self.clone()
        }
    }

    /// Same geometry restricted to time steps `start..`.
    pub fn with_time_from(&self, start: usize) -> Self {
        Self {
            time_labels: self.time_labels[start..].to_vec(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n, k, r) = (self.n_lat(), self.n_lon(), self.n_time(), self.n_real);
        if m == 0 || n == 0 || k == 0 || r == 0 {
            return Err(SgError::Structure(format!(
                "grid dimensions must be positive (R={r}, K={k}, M={m}, N={n})"
            )));
        }
        if self.len_checked().is_none() {
            return Err(SgError::Structure("grid size overflows".into()));
        }
        if self
            .lat_values
            .iter()
            .chain(&self.lon_values)
            .any(|v| !v.is_finite())
        {
            return Err(SgError::Structure("non-finite coordinate".into()));
        }
        if m > 1 {
            let increasing = self.lat_values.windows(2).all(|w| w[1] > w[0]);
            let decreasing = self.lat_values.windows(2).all(|w| w[1] < w[0]);
            if !increasing && !decreasing {
                return Err(SgError::Structure(
                    "latitudes must be strictly monotone".into(),
                ));
            }
        }
        if n > 1 {
            let step = 360.0 / n as f64;
            for w in self.lon_values.windows(2) {
                let d = (w[1] - w[0]).rem_euclid(360.0);
                if (d - step).abs() > 1e-6 {
                    return Err(SgError::Structure(format!(
                        "longitudes must be equally spaced around the circle (step {step}, found {d})"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn month_label(k: usize) -> String {
    format!("{:04}-{:02}", 2006 + k / 12, k % 12 + 1)
}

/// Four-dimensional gridded field. `variable` tags the role of the values
/// (raw wind, deviations, residuals, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleField {
    pub spec: GridSpec,
    pub variable: String,
    pub values: Vec<f64>,
}

impl EnsembleField {
    pub fn new(spec: GridSpec, variable: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(SgError::Structure(format!(
                "expected {} values, found {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SgError::Data(format!("non-finite value at flat index {i}")));
        }
        Ok(Self {
            spec,
            variable: variable.into(),
            values,
        })
    }

    pub fn zeros(spec: GridSpec, variable: impl Into<String>) -> Result<Self> {
        let len = spec.len();
        Self::new(spec, variable, vec![0.0; len])
    }

    #[inline]
    pub fn index(&self, r: usize, k: usize, m: usize, n: usize) -> usize {
        let s = &self.spec;
        ((r * s.n_time() + k) * s.n_lat() + m) * s.n_lon() + n
    }

    #[inline]
    pub fn get(&self, r: usize, k: usize, m: usize, n: usize) -> f64 {
        self.values[self.index(r, k, m, n)]
    }

    #[inline]
    pub fn set(&mut self, r: usize, k: usize, m: usize, n: usize, v: f64) {
        let i = self.index(r, k, m, n);
        self.values[i] = v;
    }

    /// Time series of realization `r` at site `(m, n)`.
    pub fn site_series(&self, r: usize, m: usize, n: usize) -> Vec<f64> {
        (0..self.spec.n_time()).map(|k| self.get(r, k, m, n)).collect()
    }

    /// All realizations' time series at site `(m, n)`.
    pub fn site_ensemble(&self, m: usize, n: usize) -> Vec<Vec<f64>> {
        (0..self.spec.n_real)
            .map(|r| self.site_series(r, m, n))
            .collect()
    }

    /// Longitude row of realization `r`, time `k`, band `m`.
    pub fn row(&self, r: usize, k: usize, m: usize) -> &[f64] {
        let start = self.index(r, k, m, 0);
        &self.values[start..start + self.spec.n_lon()]
    }

    fn ensure_same_spec(&self, other: &EnsembleField) -> Result<()> {
        let (a, b) = (&self.spec, &other.spec);
        if a.n_time() != b.n_time() || a.n_lat() != b.n_lat() || a.n_lon() != b.n_lon() {
            return Err(SgError::Structure(format!(
                "grid mismatch: ({}, {}, {}) vs ({}, {}, {})",
                a.n_time(),
                a.n_lat(),
                a.n_lon(),
                b.n_time(),
                b.n_lat(),
                b.n_lon()
            )));
        }
        Ok(())
    }
}

/// Surface class of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteClass {
    Ocean,
    Land,
    HighMountain,
}

impl SiteClass {
    /// Land and high mountain both count as land for the taper.
    pub fn is_land(self) -> bool {
        !matches!(self, SiteClass::Ocean)
    }
}

/// Per-site surface class and altitude on an `n_lat × n_lon` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoMask {
    pub n_lat: usize,
    pub n_lon: usize,
    pub class: Vec<SiteClass>,
    pub altitude: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskRecord {
    lat_index: usize,
    lon_index: usize,
    class: SiteClass,
    altitude_m: f64,
}

impl GeoMask {
    pub fn new(n_lat: usize, n_lon: usize, class: Vec<SiteClass>, altitude: Vec<f64>) -> Result<Self> {
        let mask = Self {
            n_lat,
            n_lon,
            class,
            altitude,
        };
        mask.validate()?;
        Ok(mask)
    }

    pub fn all_ocean(n_lat: usize, n_lon: usize) -> Self {
        Self {
            n_lat,
            n_lon,
            class: vec![SiteClass::Ocean; n_lat * n_lon],
            altitude: vec![0.0; n_lat * n_lon],
        }
    }

    /// Classes from altitude alone: above 1000 m is high mountain, above sea
    /// level is land, the rest is ocean.
    pub fn from_altitude(n_lat: usize, n_lon: usize, altitude: Vec<f64>) -> Result<Self> {
        let class = altitude
            .iter()
            .map(|&a| {
                if a > MOUNTAIN_THRESHOLD_M {
                    SiteClass::HighMountain
                } else if a > 0.0 {
                    SiteClass::Land
                } else {
                    SiteClass::Ocean
                }
            })
            .collect();
        Self::new(n_lat, n_lon, class, altitude)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.n_lat * self.n_lon;
        if self.class.len() != len || self.altitude.len() != len {
            return Err(SgError::Structure(format!(
                "mask must hold {len} sites, found {} classes and {} altitudes",
                self.class.len(),
                self.altitude.len()
            )));
        }
        for (i, (&c, &a)) in self.class.iter().zip(&self.altitude).enumerate() {
            if !a.is_finite() {
                return Err(SgError::Data(format!("non-finite altitude at site {i}")));
            }
            if c == SiteClass::HighMountain && a <= MOUNTAIN_THRESHOLD_M {
                return Err(SgError::Data(format!(
                    "site {i} is high mountain but altitude {a} m is not above {MOUNTAIN_THRESHOLD_M} m"
                )));
            }
        }
        Ok(())
    }

    pub fn class_at(&self, m: usize, n: usize) -> SiteClass {
        self.class[m * self.n_lon + n]
    }

    pub fn altitude_at(&self, m: usize, n: usize) -> f64 {
        self.altitude[m * self.n_lon + n]
    }

    pub fn band_classes(&self, m: usize) -> &[SiteClass] {
        &self.class[m * self.n_lon..(m + 1) * self.n_lon]
    }

    pub fn band_altitudes(&self, m: usize) -> &[f64] {
        &self.altitude[m * self.n_lon..(m + 1) * self.n_lon]
    }

    pub fn check_grid(&self, spec: &GridSpec) -> Result<()> {
        if self.n_lat != spec.n_lat() || self.n_lon != spec.n_lon() {
            return Err(SgError::Structure(format!(
                "mask is {}x{}, grid is {}x{}",
                self.n_lat,
                self.n_lon,
                spec.n_lat(),
                spec.n_lon()
            )));
        }
        Ok(())
    }

    /// Reads the `(lat_index, lon_index, class, altitude_m)` CSV layout. Every
    /// site must appear exactly once.
    pub fn load_csv(path: impl AsRef<Path>, n_lat: usize, n_lon: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut class = vec![None; n_lat * n_lon];
        let mut altitude = vec![0.0; n_lat * n_lon];
        for rec in reader.deserialize() {
            let rec: MaskRecord = rec?;
            if rec.lat_index >= n_lat || rec.lon_index >= n_lon {
                return Err(SgError::Structure(format!(
                    "mask site ({}, {}) outside {n_lat}x{n_lon} grid",
                    rec.lat_index, rec.lon_index
                )));
            }
            let i = rec.lat_index * n_lon + rec.lon_index;
            if class[i].is_some() {
                return Err(SgError::Structure(format!(
                    "mask site ({}, {}) listed twice",
                    rec.lat_index, rec.lon_index
                )));
            }
            class[i] = Some(rec.class);
            altitude[i] = rec.altitude_m;
        }
        let class = class
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    SgError::Structure(format!("mask site ({}, {}) missing", i / n_lon, i % n_lon))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n_lat, n_lon, class, altitude)
    }

    pub fn store_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for m in 0..self.n_lat {
            for n in 0..self.n_lon {
                writer.serialize(MaskRecord {
                    lat_index: m,
                    lon_index: n,
                    class: self.class_at(m, n),
                    altitude_m: self.altitude_at(m, n),
                })?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Ensemble mean smoothed in time at every site.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMean {
    pub field: EnsembleField,
    pub lambda: f64,
}

/// Cell-wise average over realizations; the result has a single realization.
pub fn ensemble_mean(field: &EnsembleField) -> Result<EnsembleField> {
    let spec = &field.spec;
    spec.validate()?;
    let r_count = spec.n_real;
    let slab = spec.n_time() * spec.n_lat() * spec.n_lon();
    if field.values.len() != r_count * slab {
        return Err(SgError::Structure("field length does not match its grid".into()));
    }
    let mut out = vec![0.0; slab];
    for chunk in field.values.chunks_exact(slab) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    let inv = 1.0 / r_count as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    EnsembleField::new(spec.with_real(1), format!("{}_mean", field.variable), out)
}

/// `field - mean` for every realization; `mean` must have one realization.
pub fn deviations(field: &EnsembleField, mean: &EnsembleField) -> Result<EnsembleField> {
    field.ensure_same_spec(mean)?;
    if mean.spec.n_real != 1 {
        return Err(SgError::Structure(format!(
            "mean field must have one realization, found {}",
            mean.spec.n_real
        )));
    }
    let slab = mean.values.len();
    let values = field
        .values
        .chunks_exact(slab)
        .flat_map(|chunk| chunk.iter().zip(&mean.values).map(|(v, m)| v - m))
        .collect();
    EnsembleField::new(field.spec.clone(), "deviation", values)
}

/// Penalized temporal smoothing of a single-realization field.
///
/// At each site returns the minimizer of
/// `λ Σ (x_k - w_k)² + (1 - λ) Σ_{interior k} (w_{k+1} - 2 w_k + w_{k-1})²`.
pub fn smooth_mean(mean: &EnsembleField, lambda: f64) -> Result<SmoothedMean> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(SgError::Parameter(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    if mean.spec.n_real != 1 {
        return Err(SgError::Structure("smoothing expects a single-realization field".into()));
    }
    let spec = &mean.spec;
    let (k_len, m_len, n_len) = (spec.n_time(), spec.n_lat(), spec.n_lon());
    let mut out = mean.clone();
    out.variable = format!("{}_smoothed", mean.variable);
    if lambda < 1.0 && k_len >= 3 {
        let solver = SecondDifferenceSmoother::new(k_len, lambda);
        let mut series = vec![0.0; k_len];
        for m in 0..m_len {
            for n in 0..n_len {
                for (k, s) in series.iter_mut().enumerate() {
                    *s = mean.get(0, k, m, n);
                }
                let smoothed = solver.smooth(&series);
                for (k, v) in smoothed.into_iter().enumerate() {
                    out.set(0, k, m, n, v);
                }
            }
        }
    }
    Ok(SmoothedMean { field: out, lambda })
}

/// Sum of squared interior second differences.
pub fn roughness(series: &[f64]) -> f64 {
    series
        .windows(3)
        .map(|w| {
            let d = w[2] - 2.0 * w[1] + w[0];
            d * d
        })
        .sum()
}

/// Pre-factored `λ I + (1-λ) DᵀD` for a fixed series length, where `D` is the
/// `(K-2) × K` second-difference operator.
pub struct SecondDifferenceSmoother {
    lambda: f64,
    chol: BandedCholesky,
}

impl SecondDifferenceSmoother {
    pub fn new(len: usize, lambda: f64) -> Self {
        let mu = 1.0 - lambda;
        // DᵀD is pentadiagonal: store diagonal and two sub-diagonals.
        let mut bands = vec![[0.0; 3]; len];
        for j in 0..len.saturating_sub(2) {
            let coef = [1.0, -2.0, 1.0];
            for a in 0..3 {
                for b in 0..=a {
                    bands[j + a][a - b] += mu * coef[a] * coef[b];
                }
            }
        }
        for row in bands.iter_mut() {
            row[0] += lambda;
        }
        Self {
            lambda,
            chol: BandedCholesky::factor(bands),
        }
    }

    /// Solves for the correction `δ` with `(λI + μDᵀD) δ = μ DᵀD x` and
    /// returns `x - δ`, so inputs with zero second differences come back
    /// unchanged.
    pub fn smooth(&self, x: &[f64]) -> Vec<f64> {
        let len = x.len();
        let mu = 1.0 - self.lambda;
        let mut rhs = vec![0.0; len];
        for j in 0..len.saturating_sub(2) {
            let d = x[j] - 2.0 * x[j + 1] + x[j + 2];
            if d != 0.0 {
                rhs[j] += mu * d;
                rhs[j + 1] -= 2.0 * mu * d;
                rhs[j + 2] += mu * d;
            }
        }
        let delta = self.chol.solve(rhs);
        x.iter().zip(delta).map(|(v, d)| v - d).collect()
    }
}

/// Cholesky factor of a symmetric positive-definite matrix with two
/// sub-diagonals. `rows[i][d]` holds entry `(i, i-d)`.
struct BandedCholesky {
    rows: Vec<[f64; 3]>,
}

impl BandedCholesky {
    fn factor(mut a: Vec<[f64; 3]>) -> Self {
        let len = a.len();
        for i in 0..len {
            for d in (1..=2).rev() {
                if d > i {
                    continue;
                }
                let j = i - d;
                // L[i][j] = (A[i][j] - Σ_{k<j} L[i][k] L[j][k]) / L[j][j]
                let mut s = a[i][d];
                for k in j.saturating_sub(2)..j {
                    if i - k <= 2 {
                        s -= a[i][i - k] * a[j][j - k];
                    }
                }
                a[i][d] = s / a[j][0];
            }
            let mut s = a[i][0];
            for d in 1..=2.min(i) {
                s -= a[i][d] * a[i][d];
            }
            a[i][0] = s.sqrt();
        }
        Self { rows: a }
    }

    fn solve(&self, mut b: Vec<f64>) -> Vec<f64> {
        let len = b.len();
        for i in 0..len {
            let mut s = b[i];
            for d in 1..=2.min(i) {
                s -= self.rows[i][d] * b[i - d];
            }
            b[i] = s / self.rows[i][0];
        }
        for i in (0..len).rev() {
            let mut s = b[i];
            for d in 1..=2 {
                if i + d < len {
                    s -= self.rows[i + d][d] * b[i + d];
                }
            }
            b[i] = s / self.rows[i][0];
        }
        b
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ContainerHeader {
    format: String,
    version: u32,
    variable: String,
    byte_order: String,
    dtype: String,
    n_real: usize,
    n_time: usize,
    n_lat: usize,
    n_lon: usize,
    lat: Vec<f64>,
    lon: Vec<f64>,
    time: Vec<String>,
}

/// Payload precision of a stored field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn tag(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Writes the field with a double-precision payload (bit-exact round trip).
pub fn store_field(field: &EnsembleField, path: impl AsRef<Path>) -> Result<()> {
    store_field_with(field, path, Precision::F64)
}

/// Container layout: 8-byte magic, little-endian `u32` header length, JSON
/// header, then the little-endian payload in `(realization, time, lat, lon)`
/// order.
pub fn store_field_with(field: &EnsembleField, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
    let spec = &field.spec;
    let header = ContainerHeader {
        format: "tgh-sg-field".into(),
        version: FORMAT_VERSION,
        variable: field.variable.clone(),
        byte_order: "little".into(),
        dtype: precision.tag().into(),
        n_real: spec.n_real,
        n_time: spec.n_time(),
        n_lat: spec.n_lat(),
        n_lon: spec.n_lon(),
        lat: spec.lat_values.clone(),
        lon: spec.lon_values.clone(),
        time: spec.time_labels.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(header_bytes.len())
        .map_err(|_| SgError::Format("header too large".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header_bytes)?;
    match precision {
        Precision::F64 => {
            for v in &field.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Precision::F32 => {
            for v in &field.values {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<EnsembleField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| SgError::Format("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(SgError::Format("bad magic".into()));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| SgError::Format("file too short for header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| SgError::Format("header truncated".into()))?;
    let header: ContainerHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| SgError::Format(format!("header is not valid JSON: {e}")))?;
    if header.format != "tgh-sg-field" || header.version != FORMAT_VERSION {
        return Err(SgError::Format(format!(
            "unsupported container {} v{}",
            header.format, header.version
        )));
    }
    if header.byte_order != "little" {
        return Err(SgError::Format(format!("unsupported byte order {}", header.byte_order)));
    }
    let precision = match header.dtype.as_str() {
        "f32" => Precision::F32,
        "f64" => Precision::F64,
        other => return Err(SgError::Format(format!("unsupported dtype {other}"))),
    };
    if header.lat.len() != header.n_lat
        || header.lon.len() != header.n_lon
        || header.time.len() != header.n_time
    {
        return Err(SgError::Structure(
            "coordinate arrays disagree with header dimensions".into(),
        ));
    }
    let spec = GridSpec::new(header.n_real, header.lat, header.lon, header.time)?;
    let expected = spec
        .len_checked()
        .and_then(|n| n.checked_mul(precision.width()).map(|b| (n, b)))
        .ok_or_else(|| SgError::Structure("dimension product overflows".into()))?;
    let (count, byte_len) = expected;
    let mut payload = Vec::with_capacity(byte_len.min(1 << 30));
    r.take(byte_len as u64 + 1).read_to_end(&mut payload)?;
    if payload.len() < byte_len {
        return Err(SgError::Truncated {
            expected: count,
            found: payload.len() / precision.width(),
        });
    }
    if payload.len() > byte_len {
        return Err(SgError::Format("trailing bytes after payload".into()));
    }
    let values = match precision {
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
    };
    EnsembleField::new(spec, header.variable, values)
}

//! Staged pipeline driving the command line: configuration, per-stage
//! parameter tables, manifests and the generate/diagnose/wpd/synthetic
//! commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    classify_delta, contrast_variances, model_contrast_variances, near_future_trend, normalized_loglik_delta,
    percentiles, site_moment_tests, squared_distance, ssim, DeltaClass, MetricMap,
};
use crate::error::{Result, SgError};
use crate::grid::{
    deviations, ensemble_mean, load_field, smooth_mean, store_field, EnsembleField, GeoMask, SmoothedMean,
};
use crate::latvar::{fit_lat, LatBandFit, LatSubModel, SpectralStack};
use crate::spectrum::{analysis_matrix, build_spectrum, fit_band, BandData, BandFit, LonSubModel};
use crate::surrogate::{generate, generate_synthetic_truth, ModelBundle, SiteModel, SyntheticConfig};
use crate::temporal::{residuals, select_and_fit, TemporalModel, TemporalSiteParams, DEFAULT_P_MAX};
use crate::tukey::TukeySiteParams;
use crate::wpd::{wpd_monthly, write_wpd_csv, WpdConfig};

/// Everything the driver needs; loaded from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Ensemble field container used by the fitting steps and diagnostics.
    pub input: Option<PathBuf>,
    /// Land/ocean/altitude CSV; all ocean when absent.
    pub mask: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub p_max: usize,
    pub temporal_model: TemporalModel,
    pub lon_sub_model: LonSubModel,
    pub lat_sub_model: LatSubModel,
    pub n_blocks: usize,
    /// Smoothing weight in `(0, 1]`; 1 keeps the raw ensemble mean.
    pub lambda: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    pub n_runs: usize,
    /// Simulated fields for model-implied contrast variances.
    pub n_sims: usize,
    /// Optional `[start, end)` time window for trend maps.
    pub trend_window: Option<[usize; 2]>,
    pub wpd: WpdConfig,
    /// Field for the wpd command; defaults to the generated surrogates.
    pub wpd_input: Option<PathBuf>,
    pub wpd_site: [usize; 2],
    pub wpd_month: usize,
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            mask: None,
            output_dir: PathBuf::from("sg-out"),
            p_max: DEFAULT_P_MAX,
            temporal_model: TemporalModel::TukeyAr,
            lon_sub_model: LonSubModel::Full,
            lat_sub_model: LatSubModel::Full,
            n_blocks: 10,
            lambda: 0.99,
            seed: 0,
            workers: 0,
            n_runs: 40,
            n_sims: 20,
            trend_window: None,
            wpd: WpdConfig::default(),
            wpd_input: None,
            wpd_site: [0, 0],
            wpd_month: 0,
            synthetic: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| SgError::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| SgError::Config(format!("config is not JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| SgError::Config(e.to_string()))
    }

    /// Applies `key=value` overrides; dotted keys reach nested fields and
    /// values are parsed as JSON, falling back to a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| SgError::Config(format!("override '{item}' is not key=value")))?;
            let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut value;
            for part in key.split('.') {
                let obj = slot
                    .as_object_mut()
                    .ok_or_else(|| SgError::Config(format!("override path '{key}' does not name an object field")))?;
                slot = obj.entry(part.to_string()).or_insert(Value::Null);
            }
            *slot = parsed;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(SgError::Config(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        if self.n_blocks == 0 || self.n_runs == 0 {
            return Err(SgError::Config("n_blocks and n_runs must be positive".into()));
        }
        for p in [&self.input, &self.mask].into_iter().flatten() {
            if !p.exists() {
                return Err(SgError::Config(format!("path {} does not exist", p.display())));
            }
        }
        self.wpd.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&serde_json::to_value(self).expect("serializable")).expect("serializable");
        hex_digest(&bytes)
    }

    fn dir(&self, stage: &str) -> PathBuf {
        self.output_dir.join(stage)
    }

    fn input_path(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| SgError::Config("no input field configured (set input=...)".into()))
    }

    fn load_mask(&self, n_lat: usize, n_lon: usize) -> Result<GeoMask> {
        match &self.mask {
            Some(p) => GeoMask::load_csv(p, n_lat, n_lon),
            None => Ok(GeoMask::all_ocean(n_lat, n_lon)),
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(hex_digest(&fs::read(path)?))
}

/// Provenance written next to every stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: PipelineConfig,
    /// Upstream files and their SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn write_manifest(config: &PipelineConfig, step: &str, dir: &Path, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    let hashes = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
        paths.iter().map(|p| Ok((p.display().to_string(), file_hash(p)?))).collect()
    };
    let manifest = Manifest {
        step: step.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        config: config.clone(),
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, step: &str) -> Result<T> {
    if !path.exists() {
        return Err(SgError::Staging {
            step: step.to_string(),
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn require(path: PathBuf, step: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(SgError::Staging {
            step: step.to_string(),
            path,
        })
    }
}

/// One site of the first-stage table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub lat_index: usize,
    pub lon_index: usize,
    pub model: TemporalModel,
    pub tukey: TukeySiteParams,
    pub temporal: TemporalSiteParams,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    /// BIC of the Gaussian AR comparison fit on the same sample.
    pub bic_gaussian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Table {
    pub module: String,
    pub p_max: usize,
    pub lambda: f64,
    pub sites: Vec<SiteRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRecord {
    pub lat_index: usize,
    #[serde(flatten)]
    pub fit: BandFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step2Table {
    pub module: String,
    pub bands: Vec<BandRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step3Table {
    pub module: String,
    pub n_blocks: usize,
    pub bands: Vec<LatBandFit>,
}

const STEP1: &str = "fit-step1";
const STEP2: &str = "fit-step2";
const STEP3: &str = "fit-step3";
const GENERATE: &str = "generate";

fn step1_paths(c: &PipelineConfig) -> (PathBuf, PathBuf, PathBuf) {
    let d = c.dir("step1");
    (d.join("tgh_ar.json"), d.join("smoothed_mean.bin"), d.join("residuals.bin"))
}

/// Deviations from the smoothed mean, per-site marginal fits and residuals.
pub fn run_step1(config: &PipelineConfig) -> Result<Step1Table> {
    config.validate()?;
    let input = config.input_path()?.to_path_buf();
    let field = load_field(&input)?;
    let spec = field.spec.clone();
    let mask = config.load_mask(spec.n_lat(), spec.n_lon())?;
    mask.check_grid(&spec)?;
    let k_len = spec.n_time();
    if k_len <= config.p_max + 2 {
        return Err(SgError::Data(format!("{k_len} time steps is too short for order {}", config.p_max)));
    }
    let smoothed = smooth_mean(&ensemble_mean(&field)?, config.lambda)?;
    let dev = deviations(&field, &smoothed.field)?;
    let n_len = spec.n_lon();
    let p_max = config.p_max;
    let fits: Vec<(SiteRecord, Vec<Vec<f64>>)> = (0..spec.n_sites())
        .into_par_iter()
        .map(|site| {
            let (m, n) = (site / n_len, site % n_len);
            let series = dev.site_ensemble(m, n);
            let fit = select_and_fit(&series, p_max, config.temporal_model)?;
            let gaussian = if config.temporal_model == TemporalModel::GaussianAr {
                fit.clone()
            } else {
                select_and_fit(&series, p_max, TemporalModel::GaussianAr)?
            };
            // align every site on the common start p_max
            let res: Vec<Vec<f64>> = residuals(&series, &fit)?
                .into_iter()
                .map(|r| r[p_max - fit.temporal.p..].to_vec())
                .collect();
            Ok((
                SiteRecord {
                    lat_index: m,
                    lon_index: n,
                    model: fit.model,
                    tukey: fit.tukey,
                    temporal: fit.temporal,
                    loglik: fit.loglik,
                    bic: fit.bic,
                    n_params: fit.n_params,
                    bic_gaussian: gaussian.bic,
                },
                res,
            ))
        })
        .collect::<Result<_>>()?;
    let res_spec = spec.with_time_from(p_max);
    let mut res_field = EnsembleField::zeros(res_spec, "residual")?;
    for (site, (_, res)) in fits.iter().enumerate() {
        let (m, n) = (site / n_len, site % n_len);
        for (r, series) in res.iter().enumerate() {
            for (k, v) in series.iter().enumerate() {
                res_field.set(r, k, m, n, *v);
            }
        }
    }
    let table = Step1Table {
        module: "tgh_ar".into(),
        p_max,
        lambda: config.lambda,
        sites: fits.into_iter().map(|(s, _)| s).collect(),
    };
    let dir = config.dir("step1");
    fs::create_dir_all(&dir)?;
    let (table_path, mean_path, res_path) = step1_paths(config);
    write_json(&table_path, &table)?;
    store_field(&smoothed.field, &mean_path)?;
    store_field(&res_field, &res_path)?;
    let mut inputs = vec![input];
    inputs.extend(config.mask.clone());
    write_manifest(config, STEP1, &dir, &inputs, &[table_path, mean_path, res_path])?;
    Ok(table)
}

fn step2_path(c: &PipelineConfig) -> PathBuf {
    c.dir("step2").join("lon_spectrum.json")
}

fn step3_path(c: &PipelineConfig) -> PathBuf {
    c.dir("step3").join("lat_var.json")
}

/// Longitudinal spectrum of every band from the first-stage residuals.
pub fn run_step2(config: &PipelineConfig) -> Result<Step2Table> {
    config.validate()?;
    let (table_path, _, res_path) = step1_paths(config);
    let table_path = require(table_path, STEP1)?;
    let res_path = require(res_path, STEP1)?;
    let res = load_field(&res_path)?;
    let spec = &res.spec;
    let mask = config.load_mask(spec.n_lat(), spec.n_lon())?;
    mask.check_grid(spec)?;
    let bands: Vec<BandRecord> = (0..spec.n_lat())
        .into_par_iter()
        .map(|m| {
            let rows = (0..spec.n_real).flat_map(|r| (0..spec.n_time()).map(move |k| (r, k)));
            let data = BandData::from_rows(spec.n_lon(), rows.map(|(r, k)| res.row(r, k, m)))?;
            let fit = fit_band(&data, mask.band_classes(m), mask.band_altitudes(m), config.lon_sub_model)?;
            Ok(BandRecord { lat_index: m, fit })
        })
        .collect::<Result<_>>()?;
    let table = Step2Table {
        module: "lon_spectrum".into(),
        bands,
    };
    let dir = config.dir("step2");
    fs::create_dir_all(&dir)?;
    let out = step2_path(config);
    write_json(&out, &table)?;
    write_manifest(config, STEP2, &dir, &[table_path, res_path], &[out])?;
    Ok(table)
}

/// Packed spectral coefficients of every band, inverting each band's
/// fitted synthesis.
pub fn spectral_stacks(res: &EnsembleField, mask: &GeoMask, step2: &Step2Table) -> Result<Vec<SpectralStack>> {
    let spec = &res.spec;
    let n = spec.n_lon();
    (0..spec.n_lat())
        .into_par_iter()
        .map(|m| {
            let params = &step2
                .bands
                .get(m)
                .ok_or_else(|| SgError::Structure(format!("no spectrum record for band {m}")))?
                .fit
                .params;
            let spectrum = build_spectrum(mask.band_classes(m), mask.band_altitudes(m), params)?;
            let pinv = analysis_matrix(&spectrum)?;
            let mut stack = SpectralStack::zeros(n, spec.n_time(), spec.n_real);
            for r in 0..spec.n_real {
                for k in 0..spec.n_time() {
                    let h = res.row(r, k, m);
                    let u = stack.vector_mut(r, k);
                    for (j, uj) in u.iter_mut().enumerate() {
                        *uj = (0..n).map(|i| pinv[(j, i)] * h[i]).sum();
                    }
                }
            }
            Ok(stack)
        })
        .collect()
}

/// Latitudinal autoregression on the whitened spectral coefficients.
pub fn run_step3(config: &PipelineConfig) -> Result<Step3Table> {
    config.validate()?;
    let (_, _, res_path) = step1_paths(config);
    let res_path = require(res_path, STEP1)?;
    let step2_file = step2_path(config);
    let step2: Step2Table = read_json(&step2_file, STEP2)?;
    let res = load_field(&res_path)?;
    let mask = config.load_mask(res.spec.n_lat(), res.spec.n_lon())?;
    let stacks = spectral_stacks(&res, &mask, &step2)?;
    let bands = fit_lat(&stacks, config.lat_sub_model, config.n_blocks)?;
    let table = Step3Table {
        module: "lat_var".into(),
        n_blocks: config.n_blocks,
        bands,
    };
    let dir = config.dir("step3");
    fs::create_dir_all(&dir)?;
    let out = step3_path(config);
    write_json(&out, &table)?;
    write_manifest(config, STEP3, &dir, &[res_path, step2_file], &[out])?;
    Ok(table)
}

/// Assembles the model bundle from the three stage tables.
pub fn load_bundle(config: &PipelineConfig) -> Result<ModelBundle> {
    let (table_path, mean_path, _) = step1_paths(config);
    let step1: Step1Table = read_json(&table_path, STEP1)?;
    let mean_path = require(mean_path, STEP1)?;
    let step2: Step2Table = read_json(&step2_path(config), STEP2)?;
    let step3: Step3Table = read_json(&step3_path(config), STEP3)?;
    let mean = load_field(&mean_path)?;
    let spec = mean.spec.clone();
    let mask = config.load_mask(spec.n_lat(), spec.n_lon())?;
    let mut sites = vec![None; spec.n_sites()];
    for s in step1.sites {
        let i = s.lat_index * spec.n_lon() + s.lon_index;
        if i >= sites.len() || sites[i].is_some() {
            return Err(SgError::Structure(format!(
                "site ({}, {}) is out of range or repeated",
                s.lat_index, s.lon_index
            )));
        }
        sites[i] = Some(SiteModel {
            tukey: s.tukey,
            temporal: s.temporal,
        });
    }
    let sites = sites
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| SgError::Structure(format!("site {i} missing from the first-stage table"))))
        .collect::<Result<Vec<_>>>()?;
    let bundle = ModelBundle {
        grid: spec.clone(),
        mask,
        smoothed_mean: SmoothedMean {
            field: mean,
            lambda: step1.lambda,
        },
        sites,
        bands: step2.bands.into_iter().map(|b| b.fit.params).collect(),
        latvar: step3.bands.iter().map(LatBandFit::params).collect(),
        rng_seed: config.seed,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn surrogate_path(c: &PipelineConfig) -> PathBuf {
    c.dir("generate").join("surrogates.bin")
}

/// Draws `config.n_runs` surrogate runs from the fitted bundle.
pub fn run_generate(config: &PipelineConfig) -> Result<PathBuf> {
    config.validate()?;
    let bundle = load_bundle(config)?;
    let field = generate(&bundle, config.n_runs)?;
    let dir = config.dir("generate");
    fs::create_dir_all(&dir)?;
    let out = surrogate_path(config);
    store_field(&field, &out)?;
    let (t1, mean, _) = step1_paths(config);
    write_manifest(config, GENERATE, &dir, &[t1, mean, step2_path(config), step3_path(config)], &[out.clone()])?;
    Ok(out)
}

const TREND_SSIM_WINDOW: usize = 8;

/// Scalar results of the diagnose command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub n_sites: usize,
    /// Share of sites where the Tukey model has the smaller BIC.
    pub tukey_preferred_fraction: f64,
    pub skew_significant_fraction: f64,
    pub kurt_significant_fraction: f64,
    /// Full versus tied longitudinal model.
    pub lon_full_vs_lao_delta: f64,
    pub lon_full_vs_lao_class: DeltaClass,
    /// Full versus uncoupled latitudinal model.
    pub lat_full_vs_arl_delta: f64,
    pub lat_full_vs_arl_class: DeltaClass,
    /// 10/25/50/75/90 percentiles of squared contrast-variance distances.
    pub ew_distance_percentiles: Vec<f64>,
    pub ns_distance_percentiles: Vec<f64>,
    /// Similarity of the data and surrogate ensemble-mean trend maps, when
    /// a trend window is set and surrogates exist.
    pub trend_ssim: Option<f64>,
}

/// Moment tests, BIC preference, contrast variances and likelihood deltas.
pub fn run_diagnose(config: &PipelineConfig) -> Result<DiagnoseSummary> {
    config.validate()?;
    let input = config.input_path()?.to_path_buf();
    let (t1, mean_path, res_path) = step1_paths(config);
    let step1: Step1Table = read_json(&t1, STEP1)?;
    let step2: Step2Table = read_json(&step2_path(config), STEP2)?;
    let step3: Step3Table = read_json(&step3_path(config), STEP3)?;
    let field = load_field(&input)?;
    let mean = load_field(&require(mean_path, STEP1)?)?;
    let res = load_field(&require(res_path.clone(), STEP1)?)?;
    let spec = &field.spec;
    let (m_len, n_len) = (spec.n_lat(), spec.n_lon());
    let dir = config.dir("diagnose");
    fs::create_dir_all(&dir)?;
    let mut outputs = vec![];
    let mut emit = |name: &str, map: &MetricMap| -> Result<()> {
        let p = dir.join(name);
        map.write_csv(&p)?;
        outputs.push(p);
        Ok(())
    };

    let dev = deviations(&field, &mean)?;
    let moments = site_moment_tests(&dev)?;
    let to_map = |f: &dyn Fn(usize) -> Option<f64>| MetricMap::new(m_len, n_len, (0..m_len * n_len).map(f).collect());
    emit("skewness.csv", &to_map(&|i| Some(moments[i].skewness))?)?;
    emit("kurtosis.csv", &to_map(&|i| Some(moments[i].kurtosis))?)?;
    emit("z_skew.csv", &to_map(&|i| Some(moments[i].z_skew))?)?;
    emit("z_kurt.csv", &to_map(&|i| Some(moments[i].z_kurt))?)?;
    let mut bic_delta = vec![None; m_len * n_len];
    for s in &step1.sites {
        bic_delta[s.lat_index * n_len + s.lon_index] = Some(s.bic_gaussian - s.bic);
    }
    let bic_map = MetricMap::new(m_len, n_len, bic_delta)?;
    emit("bic_delta.csv", &bic_map)?;

    let (ew, ns) = contrast_variances(&res)?;
    let bundle = load_bundle(config)?;
    let (ew_model, ns_model) = model_contrast_variances(&bundle, config.n_sims)?;
    let ew_dist = squared_distance(&ew, &ew_model)?;
    let ns_dist = squared_distance(&ns, &ns_model)?;
    emit("contrast_ew.csv", &ew)?;
    emit("contrast_ns.csv", &ns)?;
    emit("contrast_ew_model.csv", &ew_model)?;
    emit("contrast_ns_model.csv", &ns_model)?;
    let mut trend_ssim = None;
    if let Some([k0, k1]) = config.trend_window {
        let trend = near_future_trend(&ensemble_mean(&field)?, k0, k1)?;
        emit("trend.csv", &trend[0])?;
        let sur = surrogate_path(config);
        if sur.exists() {
            let sur_trend = near_future_trend(&ensemble_mean(&load_field(&sur)?)?, k0, k1)?;
            emit("trend_surrogate.csv", &sur_trend[0])?;
            trend_ssim = Some(ssim(&trend[0], &sur_trend[0], TREND_SSIM_WINDOW)?);
        }
    }

    let probs = [0.1, 0.25, 0.5, 0.75, 0.9];
    let n_sites = m_len * n_len;
    let frac = |count: usize| count as f64 / n_sites as f64;
    let lon_full: f64 = step2.bands.iter().map(|b| b.fit.loglik).sum();
    let lon_lao: f64 = step2.bands.iter().map(|b| b.fit.lao_loglik).sum();
    let lat_full: f64 = step3.bands.iter().map(|b| b.loglik).sum();
    let lat_arl: f64 = step3.bands.iter().map(|b| b.arl_loglik).sum();
    let (k_res, r_len) = (res.spec.n_time(), res.spec.n_real.max(2));
    let lon_delta = normalized_loglik_delta(lon_lao, lon_full, n_len, m_len, k_res, r_len);
    let lat_delta = normalized_loglik_delta(lat_arl, lat_full, n_len, m_len, k_res, r_len);
    let summary = DiagnoseSummary {
        n_sites,
        tukey_preferred_fraction: frac(bic_map.present().iter().filter(|&&d| d > 0.0).count()),
        skew_significant_fraction: frac(moments.iter().filter(|t| t.z_skew.abs() > 1.96).count()),
        kurt_significant_fraction: frac(moments.iter().filter(|t| t.z_kurt.abs() > 1.96).count()),
        lon_full_vs_lao_delta: lon_delta,
        lon_full_vs_lao_class: classify_delta(lon_delta),
        lat_full_vs_arl_delta: lat_delta,
        lat_full_vs_arl_class: classify_delta(lat_delta),
        ew_distance_percentiles: percentiles(&ew_dist.present(), &probs)?,
        ns_distance_percentiles: percentiles(&ns_dist.present(), &probs)?,
        trend_ssim,
    };
    let sp = dir.join("summary.json");
    write_json(&sp, &summary)?;
    outputs.push(sp);
    write_manifest(config, "diagnose", &dir, &[input, t1, res_path], &outputs)?;
    Ok(summary)
}

/// Hub-height power density per run for one site and calendar month.
pub fn run_wpd(config: &PipelineConfig) -> Result<PathBuf> {
    config.validate()?;
    let input = match &config.wpd_input {
        Some(p) => p.clone(),
        None => require(surrogate_path(config), GENERATE)?,
    };
    let field = load_field(&input)?;
    let [lat, lon] = config.wpd_site;
    let rows = wpd_monthly(&field, lat, lon, config.wpd_month, &config.wpd)?;
    let dir = config.dir("wpd");
    fs::create_dir_all(&dir)?;
    let out = dir.join("wpd.csv");
    write_wpd_csv(&out, &rows)?;
    write_manifest(config, "wpd", &dir, &[input], &[out.clone()])?;
    Ok(out)
}

/// Truth bundle of a synthetic ensemble, as written by [`run_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config: SyntheticConfig,
    pub sites: Vec<SiteModel>,
}

/// Writes a synthetic ensemble, its mask and the generating parameters.
pub fn run_synthetic(config: &PipelineConfig) -> Result<(PathBuf, ModelBundle)> {
    let syn = config
        .synthetic
        .clone()
        .ok_or_else(|| SgError::Config("no synthetic section in the configuration".into()))?;
    let mask = match &config.mask {
        Some(p) => Some(GeoMask::load_csv(p, syn.n_lat, syn.n_lon)?),
        None => None,
    };
    let (field, bundle) = generate_synthetic_truth(&syn, mask)?;
    let dir = config.dir("synthetic");
    fs::create_dir_all(&dir)?;
    let field_path = dir.join("field.bin");
    let mask_path = dir.join("mask.csv");
    let truth_path = dir.join("truth.json");
    store_field(&field, &field_path)?;
    bundle.mask.store_csv(&mask_path)?;
    write_json(
        &truth_path,
        &TruthRecord {
            config: syn,
            sites: bundle.sites.clone(),
        },
    )?;
    write_manifest(config, "synthetic", &dir, &[], &[field_path.clone(), mask_path, truth_path])?;
    Ok((field_path, bundle))
}

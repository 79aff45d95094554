//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 5 9`.
//!
//! Tolerance bands marked "pre-build" come from
//! `cargo run --release --example calibration -- <study>` on seeds disjoint
//! from the ones used here.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tgh_sg::diagnostics::{contrast_variances, site_moment_tests};
use tgh_sg::grid::{
    deviations, load_field, smooth_mean, EnsembleField, GridSpec, SiteClass,
};
use tgh_sg::latvar::{
    build_transition, coherence, fit_lat_pair, lat_pair_loglik, propagate, simulate_stacks, LatSubModel,
    LatVarParams, ZETA_MAX,
};
use tgh_sg::pipeline::{self, PipelineConfig};
use tgh_sg::spectrum::{
    band_covariance, build_spectrum, fit_band, synthesis_matrix, synthesize_band, BandData, BandSpectrumParams,
    EvolutionarySpectrum, LonSubModel, MaternSpectrumParams, SpectralCoeffs, LAND, MOUNTAIN, OCEAN,
};
use tgh_sg::surrogate::{generate, generate_synthetic_truth, SyntheticConfig};
use tgh_sg::temporal::{bic_delta_gaussian, fit_site, fit_site_fixed_shape, simulate_site, TemporalSiteParams};
use tgh_sg::tukey::{latent_moments, log_density, tau, tau_inverse, TukeySiteParams, DEFAULT_INVERSE_TOL};
use tgh_sg::wpd::{extrapolate_wind, wind_power_density, WpdConfig};

type Outcome = Result<String, String>;

/// Seed fixed before any of the randomized checks below were run.
const SEED: u64 = 20261016;

fn lib<T>(r: tgh_sg::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within_time(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("{what} took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

// ---------------------------------------------------------------- 1

fn tukey_round_trip() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut count = 0;
    for hi in 0..=9 {
        let h = hi as f64 * 0.05;
        for gi in -10..=10 {
            let g = gi as f64 * 0.1;
            for zi in -24..=24 {
                let z = zi as f64 * 0.25;
                let y = lib(tau(z, g, h))?;
                let back = lib(tau_inverse(y, g, h, DEFAULT_INVERSE_TOL))?;
                worst = worst.max((back - z).abs());
                count += 1;
            }
        }
    }
    within_time(t.elapsed(), 5.0, "round trip")?;
    if worst <= 1e-8 {
        Ok(format!("{count} grid points, max |z' - z| = {worst:.2e}"))
    } else {
        Err(format!("max |z' - z| = {worst:.2e} exceeds 1e-8"))
    }
}

// ---------------------------------------------------------------- 2

/// Trapezoid rule in `t` with `y = ξ + ω sinh t`, which spreads both tails
/// over a finite window without using the transform itself.
fn density_mass(p: &TukeySiteParams) -> Result<f64, String> {
    let (half, dt) = (30.0, 0.002);
    let steps = (2.0 * half / dt) as usize;
    let mut total = 0.0;
    for i in 0..=steps {
        let t = -half + i as f64 * dt;
        let y = p.xi + p.omega * t.sinh();
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        total += w * lib(log_density(y, p))?.exp() * p.omega * t.cosh();
    }
    Ok(total * dt)
}

fn density_validity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = lib(TukeySiteParams::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.5..2.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.0..0.45),
        ))?;
        let mass = density_mass(&p)?;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(format!("mass {mass:.9} at {p:?}"));
        }
        worst = worst.max((mass - 1.0).abs());
    }
    within_time(t.elapsed(), 10.0, "quadrature")?;
    Ok(format!("20 random parameter sets, max |mass - 1| = {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

/// Deviations from the true mean at `n_sites` independent truth-factory sites.
fn independent_sites(n_sites: usize, n_time: usize, n_real: usize, tukey: TukeySiteParams, seed: u64) -> Result<Vec<Vec<Vec<f64>>>, String> {
    let mut c = lib(SyntheticConfig::small(n_sites, 1, n_time, n_real, seed))?;
    c.tukey = tukey;
    c.temporal = lib(TemporalSiteParams::new(vec![0.5], 1.0))?;
    c.latvar = LatVarParams::INDEPENDENT;
    let (field, bundle) = lib(generate_synthetic_truth(&c, None))?;
    let mean = &bundle.smoothed_mean.field;
    Ok((0..n_sites)
        .map(|m| {
            let w = mean.site_series(0, m, 0);
            field
                .site_ensemble(m, 0)
                .into_iter()
                .map(|s| s.iter().zip(&w).map(|(a, b)| a - b).collect())
                .collect()
        })
        .collect())
}

/// Conditional Gaussian AR(1) with intercept by least squares.
fn closed_form_ar1(series: &[Vec<f64>]) -> (f64, f64, f64, f64) {
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in series {
        for k in 1..y.len() {
            let (x, v) = (y[k - 1], y[k]);
            n += 1.0;
            sx += x;
            sy += v;
            sxx += x * x;
            sxy += x * v;
        }
    }
    let phi = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let c = (sy - phi * sx) / n;
    let mut rss = 0.0;
    for y in series {
        for k in 1..y.len() {
            let e = y[k] - c - phi * y[k - 1];
            rss += e * e;
        }
    }
    let s2 = rss / n;
    let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + 1.0 + s2.ln());
    (c / (1.0 - phi), s2.sqrt(), phi, loglik)
}

fn step1_recovery() -> Outcome {
    // pre-build: 200 replicates, bootstrap 95% band of the median over 100 sites
    const G_BAND: (f64, f64) = (0.00728, 0.01381);
    const H_BAND: (f64, f64) = (0.00328, 0.00570);
    let t = Instant::now();
    let truth = lib(TukeySiteParams::new(0.0, 1.0, 0.4, 0.1))?;
    let sites = independent_sites(100, 1140, 5, truth, 303)?;
    let mut dg = Vec::new();
    let mut dh = Vec::new();
    for s in &sites {
        let f = lib(fit_site(s, 1))?;
        dg.push((f.tukey.g - truth.g).abs());
        dh.push((f.tukey.h - truth.h).abs());
    }
    let (mg, mh) = (median(&dg), median(&dh));

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let gauss = lib(TukeySiteParams::new(0.7, 1.3, 0.0, 0.0))?;
    let ar = lib(TemporalSiteParams::new(vec![0.5], 1.0))?;
    let series = simulate_site(&gauss, &ar, 1140, 5, 200, &mut rng);
    let fixed = lib(fit_site_fixed_shape(&series, 1, 1, 0.0, 0.0))?;
    let (xi, omega, phi, ll) = closed_form_ar1(&series);
    let gar_err = [
        (fixed.tukey.xi - xi).abs(),
        (fixed.tukey.omega - omega).abs(),
        (fixed.temporal.phi[0] - phi).abs(),
        (fixed.loglik - ll).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    within_time(t.elapsed(), 600.0, "step-1 recovery")?;
    let detail = format!(
        "median |g-g0| {mg:.5} in [{:.5}, {:.5}], median |h-h0| {mh:.5} in [{:.5}, {:.5}], g=h=0 vs closed form {gar_err:.1e}",
        G_BAND.0, G_BAND.1, H_BAND.0, H_BAND.1
    );
    let ok = (G_BAND.0..=G_BAND.1).contains(&mg) && (H_BAND.0..=H_BAND.1).contains(&mh) && gar_err <= 1e-6;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 4

fn bic_selection() -> Outcome {
    let t = Instant::now();
    let skewed = lib(TukeySiteParams::new(0.0, 1.0, 0.8, 0.0))?;
    let tgh_wins = independent_sites(100, 1140, 1, skewed, 404)?
        .iter()
        .map(|s| lib(bic_delta_gaussian(s, 1)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|&d| d > 0.0)
        .count();
    let gar_wins = independent_sites(100, 1140, 1, TukeySiteParams::IDENTITY, 405)?
        .iter()
        .map(|s| lib(bic_delta_gaussian(s, 1)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|&d| d <= 0.0)
        .count();
    within_time(t.elapsed(), 600.0, "BIC selection")?;
    let detail = format!("Tukey preferred at {tgh_wins}/100 skewed sites, Gaussian preferred at {gar_wins}/100 Gaussian sites");
    if tgh_wins >= 90 && gar_wins >= 80 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 5

fn naive_covariance(sp: &EvolutionarySpectrum) -> DMatrix<f64> {
    let n = sp.n_lon;
    DMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * (c as f64) * (i as f64 - j as f64) / n as f64;
                sp.amplitude(i, c) * sp.amplitude(j, c) * angle.cos()
            })
            .sum()
    })
}

fn spectral_oracle() -> Outcome {
    let t = Instant::now();
    let n = 48;
    let sp = lib(EvolutionarySpectrum::stationary(&lib(MaternSpectrumParams::unit_variance(0.5, 1.0, n))?, n))?;
    let cov = band_covariance(&sp);
    let mut oracle_err = (&cov - naive_covariance(&sp)).amax();
    // a nonstationary band as well
    let mut classes = vec![SiteClass::Ocean; n];
    let mut alt = vec![0.0; n];
    for j in 12..24 {
        classes[j] = if j < 20 { SiteClass::Land } else { SiteClass::HighMountain };
        alt[j] = if j < 20 { 300.0 } else { 1800.0 };
    }
    let mixed = lib(build_spectrum(&classes, &alt, &mixed_params()))?;
    oracle_err = oracle_err.max((band_covariance(&mixed) - naive_covariance(&mixed)).amax());

    let reps = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut scatter = DMatrix::<f64>::zeros(n, n);
    for _ in 0..reps {
        let h = lib(synthesize_band(&sp, &SpectralCoeffs::from_packed(&normals(&mut rng, n))))?;
        let v = DVector::from_vec(h);
        scatter += &v * v.transpose();
    }
    let mut exceed = 0;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let e = scatter[(i, j)] / reps as f64;
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / reps as f64).sqrt();
            let z = ((e - cov[(i, j)]) / se).abs();
            worst = worst.max(z);
            if z > 3.0 {
                exceed += 1;
            }
        }
    }
    within_time(t.elapsed(), 60.0, "spectral oracle")?;
    let detail = format!(
        "{exceed} of {} entries beyond 3 SE (largest {worst:.2} SE), oracle difference {oracle_err:.1e}",
        n * (n + 1) / 2
    );
    if exceed == 0 && oracle_err <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 6

fn mixed_params() -> BandSpectrumParams {
    let mut p = BandSpectrumParams::uniform(MaternSpectrumParams::new(1.0, 0.5, 1.0).unwrap());
    p.beta_psi[LAND] = 1.6;
    p.beta_psi[MOUNTAIN] = 2.2;
    p.beta_alpha[LAND] = 0.35;
    p.beta_alpha[MOUNTAIN] = 0.3;
    p.beta_nu[LAND] = 0.8;
    p.beta_nu[MOUNTAIN] = 0.7;
    p.gamma_psi = 4e-4;
    p.taper_dilate = 1;
    p
}

fn band_rows(sp: &EvolutionarySpectrum, reps: usize, seed: u64) -> Result<BandData, String> {
    let b = synthesis_matrix(sp);
    let n = sp.n_lon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..reps)
        .map(|_| (&b * DVector::from_vec(normals(&mut rng, n))).iter().copied().collect())
        .collect();
    lib(BandData::from_rows(n, rows.iter().map(|r| r.as_slice())))
}

fn step2_recovery() -> Outcome {
    // pre-build: mean ± 4 sd over 100 replicates
    const BANDS: [(f64, f64); 3] = [(0.95452, 1.04316), (0.47974, 0.51910), (0.96522, 1.03354)];
    let n = 48;
    let truth = lib(MaternSpectrumParams::new(1.0, 0.5, 1.0))?;
    let sp = lib(EvolutionarySpectrum::stationary(&truth, n))?;
    let ocean = vec![SiteClass::Ocean; n];
    let flat = vec![0.0; n];
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [9001, 9002, 9003] {
        let fit = lib(fit_band(&band_rows(&sp, 5700, seed)?, &ocean, &flat, LonSubModel::Full))?;
        let est = [fit.params.beta_psi[OCEAN], fit.params.beta_alpha[OCEAN], fit.params.beta_nu[OCEAN]];
        ok &= est.iter().zip(&BANDS).all(|(v, (lo, hi))| (lo..=hi).contains(&v));
        ok &= fit.loglik >= fit.lao_loglik;
        lines.push(format!("({:.3}, {:.3}, {:.3})", est[0], est[1], est[2]));
    }
    let mut classes = vec![SiteClass::Ocean; n];
    let mut alt = vec![0.0; n];
    for j in 10..26 {
        classes[j] = if j < 21 { SiteClass::Land } else { SiteClass::HighMountain };
        alt[j] = if j < 21 { 100.0 + 40.0 * (j - 10) as f64 } else { 1200.0 + 300.0 * (j - 21) as f64 };
    }
    let mixed = lib(build_spectrum(&classes, &alt, &mixed_params()))?;
    let mut gaps = Vec::new();
    for seed in [9101, 9102] {
        let fit = lib(fit_band(&band_rows(&mixed, 5700, seed)?, &classes, &alt, LonSubModel::Full))?;
        ok &= fit.loglik >= fit.lao_loglik;
        gaps.push(format!("{:.1}", fit.loglik - fit.lao_loglik));
    }
    let detail = format!(
        "stationary estimates {} within ψ∈[{:.3},{:.3}] α∈[{:.3},{:.3}] ν∈[{:.3},{:.3}]; mixed-band FULL - LAO = {}",
        lines.join(" "),
        BANDS[0].0,
        BANDS[0].1,
        BANDS[1].0,
        BANDS[1].1,
        BANDS[2].0,
        BANDS[2].1,
        gaps.join(", ")
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 7

fn random_latvar(rng: &mut ChaCha8Rng) -> LatVarParams {
    let zeta = if rng.gen_bool(0.05) { 1.0 } else { rng.gen_range(0.0..=1.0) };
    LatVarParams::new(rng.gen_range(-0.999..0.999), rng.gen_range(-0.999..0.999), zeta, rng.gen_range(0.01..5.0)).unwrap()
}

fn step3_properties() -> Outcome {
    // pre-build: mean ± 4 sd over 100 replicates
    const BANDS: [(f64, f64); 4] = [(0.17535, 0.22663), (-0.12218, -0.07922), (0.69136, 0.70792), (0.48162, 0.51802)];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_row = 0.0f64;
    for _ in 0..1000 {
        let p = random_latvar(&mut rng);
        let n = rng.gen_range(2..=96);
        worst_row = worst_row.max(lib(build_transition(&p, n))?.max_row_sum());
    }
    if !(worst_row < 1.0) {
        return Err(format!("Gershgorin row sum reached {worst_row}"));
    }

    let mut scalar_err = 0.0f64;
    for _ in 0..100 {
        let mut p = random_latvar(&mut rng);
        p.a = 0.0;
        p.b = 0.0;
        let n = rng.gen_range(2..=64);
        let mut h = SpectralCoeffs::from_packed(&normals(&mut rng, n));
        for _ in 0..10 {
            let e = SpectralCoeffs::from_packed(&normals(&mut rng, n));
            let next = lib(propagate(&h, &p, &e))?;
            for c in 0..n {
                let s = (c as f64 * std::f64::consts::PI / n as f64).sin();
                let phi = p.zeta.min(ZETA_MAX) * (1.0 + 4.0 * s * s).powf(-p.eta);
                scalar_err = scalar_err.max((next.0[c] - (phi * h.0[c] + e.0[c])).norm());
            }
            h = next;
        }
    }
    if scalar_err > 1e-12 {
        return Err(format!("a=b=0 propagation differs from the scalar recursion by {scalar_err:.2e}"));
    }
    // the oracle's coherence agrees with the library's
    debug_assert!((coherence(3, 0.7, 0.5, 48) - 0.7 * (1.0 + 4.0 * (3.0 * std::f64::consts::PI / 48.0).sin().powi(2)).powf(-0.5)).abs() < 1e-15);

    let truth = lib(LatVarParams::new(0.2, -0.1, 0.7, 0.5))?;
    let stacks = lib(simulate_stacks(&[LatVarParams::INDEPENDENT, truth], 48, 1140, 5, 7007))?;
    let fit = lib(fit_lat_pair(&stacks[0], &stacks[1], LatSubModel::Full, 10, 1))?;
    let est = [fit.a, fit.b, fit.zeta, fit.eta];
    let recovered = est.iter().zip(&BANDS).all(|(v, (lo, hi))| (lo..=hi).contains(&v));

    let whole = lib(fit_lat_pair(&stacks[0], &stacks[1], LatSubModel::Full, 1, 1))?;
    let block = &whole.per_block_estimates;
    let k_len = stacks[1].n_time;
    let mut single = block.len() == 1 && block[0].k_start == 0 && block[0].k_end == k_len;
    let wp = whole.params();
    single &= block.first().is_some_and(|b| b.params == wp && b.loglik == whole.loglik);
    let direct = lib(lat_pair_loglik(&stacks[0], &stacks[1], &wp, 0..k_len))?;
    let ll_gap = (direct - whole.loglik).abs() / direct.abs();
    single &= ll_gap < 1e-10;
    // the whole-sample estimate maximizes the direct likelihood
    for i in 0..4 {
        for d in [-1e-3, 1e-3] {
            let mut q = wp;
            match i {
                0 => q.a += d,
                1 => q.b += d,
                2 => q.zeta = (q.zeta + d).min(1.0),
                _ => q.eta += d,
            }
            single &= lib(lat_pair_loglik(&stacks[0], &stacks[1], &q, 0..k_len))? <= direct;
        }
    }
    let detail = format!(
        "max row sum 1 - {:.1e}, scalar oracle {scalar_err:.1e}, estimates ({:.4}, {:.4}, {:.4}, {:.4}) {} bands, one block = whole sample: {single} (loglik gap {ll_gap:.1e})",
        1.0 - worst_row,
        est[0],
        est[1],
        est[2],
        est[3],
        if recovered { "within" } else { "outside" }
    );
    if recovered && single {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 8

struct Moments {
    skew: Vec<f64>,
    kurt: Vec<f64>,
}

fn site_moments(field: &EnsembleField) -> Result<Moments, String> {
    let t = lib(site_moment_tests(field))?;
    Ok(Moments {
        skew: t.iter().map(|m| m.skewness).collect(),
        kurt: t.iter().map(|m| m.kurtosis).collect(),
    })
}

fn closure() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut syn = lib(SyntheticConfig::small(8, 48, 1140, 5, 8001))?;
    syn.tukey = lib(TukeySiteParams::new(0.0, 1.0, 0.1, 0.05))?;
    syn.g_lat_ramp = 0.3;
    // the true mean is linear in time, which smoothing leaves unchanged at any
    // weight; strong smoothing keeps the 5-member mean's noise out of the
    // deviations
    let mut config = PipelineConfig {
        output_dir: dir.path().to_path_buf(),
        synthetic: Some(syn.clone()),
        seed: 8002,
        n_runs: 40,
        lambda: 1e-6,
        ..PipelineConfig::default()
    };
    let (field_path, truth) = lib(pipeline::run_synthetic(&config))?;
    config.input = Some(field_path);
    config.mask = Some(dir.path().join("synthetic").join("mask.csv"));
    lib(pipeline::run_step1(&config))?;
    lib(pipeline::run_step2(&config))?;
    lib(pipeline::run_step3(&config))?;
    let surrogate_path: PathBuf = lib(pipeline::run_generate(&config))?;
    let fit_time = t.elapsed();
    let surrogates = lib(load_field(&surrogate_path))?;
    let bundle = lib(pipeline::load_bundle(&config))?;
    let spec = surrogates.spec.clone();
    let (k_len, n_sites, n_runs) = (spec.n_time(), spec.n_sites(), spec.n_real);

    // spread of 5-run sample moments about the true mean, from 40 fresh
    // 5-run ensembles of the truth factory
    let groups = 40;
    let mut big = syn.clone();
    big.n_real = 5 * groups;
    big.seed = 8003;
    let (many, _) = lib(generate_synthetic_truth(&big, None))?;
    let group_len = spec.with_real(5).len();
    let mut skew_draws = vec![Vec::new(); n_sites];
    let mut kurt_draws = vec![Vec::new(); n_sites];
    for gi in 0..groups {
        let chunk = many.values[gi * group_len..(gi + 1) * group_len].to_vec();
        let ens = lib(EnsembleField::new(spec.with_real(5), "truth", chunk))?;
        let m = site_moments(&lib(deviations(&ens, &truth.smoothed_mean.field))?)?;
        for s in 0..n_sites {
            skew_draws[s].push(m.skew[s]);
            kurt_draws[s].push(m.kurt[s]);
        }
    }
    let sur = site_moments(&lib(deviations(&surrogates, &bundle.smoothed_mean.field))?)?;
    // fitted-model error at 5 runs plus surrogate noise at 40 runs
    let inflate = (1.0 + 5.0 / n_runs as f64).sqrt();
    let z_limit = 4.5;
    let mut worst_skew = 0.0f64;
    let mut worst_kurt = 0.0f64;
    let mut ratio_skew = Vec::new();
    let mut ratio_kurt = Vec::new();
    for s in 0..n_sites {
        let sd = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let site = &truth.sites[s];
        let sigma = site.temporal.stationary_variance(1.0).sqrt();
        let pop = lib(latent_moments(site.tukey.g, site.tukey.h, sigma))?;
        worst_skew = worst_skew.max((sur.skew[s] - pop[2]).abs() / (sd(&skew_draws[s]) * inflate));
        worst_kurt = worst_kurt.max((sur.kurt[s] - pop[3]).abs() / (sd(&kurt_draws[s]) * inflate));
        ratio_skew.push(sur.skew[s] / pop[2]);
        ratio_kurt.push(sur.kurt[s] / pop[3]);
    }
    let moments_ok = worst_skew <= z_limit && worst_kurt <= z_limit;

    let wt = &bundle.smoothed_mean.field;
    let mut exceed = 0usize;
    for k in 0..k_len {
        for m in 0..spec.n_lat() {
            for n in 0..spec.n_lon() {
                let v: Vec<f64> = (0..n_runs).map(|r| surrogates.get(r, k, m, n)).collect();
                let mean = v.iter().sum::<f64>() / n_runs as f64;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_runs - 1) as f64).sqrt();
                if (mean - wt.get(0, k, m, n)).abs() > 3.0 * sd / (n_runs as f64).sqrt() {
                    exceed += 1;
                }
            }
        }
    }
    let cells = k_len * n_sites;
    let mean_ok = exceed == 0;

    let again = lib(generate(&bundle, n_runs))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(|e| e.to_string())?;
    let threaded = pool.install(|| generate(&bundle, n_runs)).map_err(|e| e.to_string())?;
    let deterministic = again.values == surrogates.values && threaded.values == surrogates.values;
    let elapsed = t.elapsed();
    let time_ok = elapsed.as_secs_f64() < 1800.0;

    let detail = format!(
        "fit+generate {:.0} s, total {:.0} s; moments: largest |z| skew {worst_skew:.2}, kurtosis {worst_kurt:.2} (limit {z_limit}); \
         median surrogate/population ratio skew {:.3}, kurtosis {:.3}; \
         mean check: {exceed}/{cells} cells ({:.3}%) beyond 3 SD/sqrt({n_runs}); bit-exact: {deterministic}",
        fit_time.as_secs_f64(),
        elapsed.as_secs_f64(),
        median(&ratio_skew),
        median(&ratio_kurt),
        100.0 * exceed as f64 / cells as f64,
    );
    if moments_ok && mean_ok && deterministic && time_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 9

fn contrast_check() -> Outcome {
    let (m_len, n_len, k_len, r_len) = (3, 8, 1140, 5);
    let spec = lib(GridSpec::regular(m_len, n_len, k_len, r_len))?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let field = lib(EnsembleField::new(spec.clone(), "h", normals(&mut rng, spec.len())))?;
    let (ew, ns) = lib(contrast_variances(&field))?;
    let tol = 3.0 * (8.0 / (k_len * r_len) as f64).sqrt();
    let values: Vec<f64> = ew.present().into_iter().chain(ns.present()).collect();
    let worst = values.iter().map(|v| (v - 2.0).abs()).fold(0.0, f64::max);

    let mut flat = EnsembleField::zeros(spec.clone(), "h").map_err(|e| e.to_string())?;
    for r in 0..r_len {
        for k in 0..k_len {
            for m in 0..m_len {
                let v: f64 = rng.sample(StandardNormal);
                for n in 0..n_len {
                    flat.set(r, k, m, n, v);
                }
            }
        }
    }
    let (ew0, _) = lib(contrast_variances(&flat))?;
    let zero = ew0.present().iter().all(|&v| v == 0.0);
    let detail = format!(
        "{} site values, max |Δ - 2| = {worst:.4} (tolerance {tol:.4}); constant-in-longitude Δ_ew all zero: {zero}",
        values.len()
    );
    if worst <= tol && zero {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 10

fn wpd_values() -> Outcome {
    let cfg = WpdConfig::default();
    let u = lib(extrapolate_wind(10.0, &cfg))?;
    let w = lib(wind_power_density(u, cfg.rho))?;
    // 0.5 · 1.225 · 13.459002³ evaluates to 1493.2917
    let detail = format!("u(80 m) = {u:.6} m/s, WPD = {w:.4} W/m² (1493.2917 by direct evaluation; 1493.33 quoted)");
    if (u - 13.45900).abs() <= 1e-5 && (w - 1493.2917).abs() <= 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 11

fn smoothing() -> Outcome {
    let spec = lib(GridSpec::regular(2, 3, 40, 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let noisy = lib(EnsembleField::new(spec.clone(), "w", normals(&mut rng, spec.len())))?;
    let identity = lib(smooth_mean(&noisy, 1.0))?.field.values == noisy.values;

    let mut linear = lib(EnsembleField::zeros(spec.clone(), "w"))?;
    for k in 0..40 {
        for m in 0..2 {
            for n in 0..3 {
                linear.set(0, k, m, n, 2.5 + 0.25 * k as f64 - 1.5 * m as f64 + 0.125 * (n * k) as f64);
            }
        }
    }
    let fixed = [0.99, 0.5, 0.01]
        .iter()
        .map(|&l| lib(smooth_mean(&linear, l)).map(|s| s.field.values == linear.values))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .all(|b| b);

    let k5 = lib(GridSpec::regular(1, 1, 5, 1))?;
    let mut worst = 0.0f64;
    for lambda in [0.99, 0.7, 0.2, 0.01] {
        let x = normals(&mut rng, 5);
        let f = lib(EnsembleField::new(k5.clone(), "w", x.clone()))?;
        let got = lib(smooth_mean(&f, lambda))?.field.values;
        let mut d = DMatrix::<f64>::zeros(3, 5);
        for j in 0..3 {
            d[(j, j)] = 1.0;
            d[(j, j + 1)] = -2.0;
            d[(j, j + 2)] = 1.0;
        }
        let a = DMatrix::<f64>::identity(5, 5) * lambda + d.transpose() * &d * (1.0 - lambda);
        let want = a.lu().solve(&(DVector::from_vec(x) * lambda)).ok_or("singular oracle system")?;
        for (g, w) in got.iter().zip(want.iter()) {
            worst = worst.max((g - w).abs());
        }
    }
    let detail = format!("λ=1 identity exact: {identity}; linear fixed point exact: {fixed}; K=5 dense oracle {worst:.1e}");
    if identity && fixed && worst <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("Tukey round trip", tukey_round_trip),
        ("density validity", density_validity),
        ("step-1 recovery", step1_recovery),
        ("BIC model selection", bic_selection),
        ("spectral oracle", spectral_oracle),
        ("step-2 recovery", step2_recovery),
        ("step-3 properties", step3_properties),
        ("pipeline closure", closure),
        ("contrast variances", contrast_check),
        ("wind power density", wpd_values),
        ("smoothing", smoothing),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {id:>2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {id:>2} {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

//! Monte Carlo studies behind the tolerance bands frozen in the acceptance
//! suite. Run with `cargo run --release --example calibration -- <study>`
//! where `<study>` is one of `step1`, `bic`, `step2`, `step3`.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tgh_sg::grid::{EnsembleField, SiteClass};
use tgh_sg::latvar::{fit_lat_pair, simulate_stacks, LatSubModel, LatVarParams};
use tgh_sg::spectrum::{
    fit_band, synthesis_matrix, BandData, EvolutionarySpectrum, LonSubModel, MaternSpectrumParams, OCEAN,
};
use tgh_sg::surrogate::{generate_synthetic_truth, SyntheticConfig};
use tgh_sg::temporal::{bic_delta_gaussian, fit_site, TemporalSiteParams};
use tgh_sg::tukey::TukeySiteParams;

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, s)
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Deviations of every site from the true mean, one ensemble per site.
fn site_deviations(field: &EnsembleField, mean: &EnsembleField) -> Vec<Vec<Vec<f64>>> {
    let spec = &field.spec;
    let mut out = Vec::new();
    for m in 0..spec.n_lat() {
        for n in 0..spec.n_lon() {
            let w = mean.site_series(0, m, n);
            out.push(
                field
                    .site_ensemble(m, n)
                    .into_iter()
                    .map(|s| s.iter().zip(&w).map(|(a, b)| a - b).collect())
                    .collect(),
            );
        }
    }
    out
}

fn independent_sites(
    n_sites: usize,
    n_time: usize,
    n_real: usize,
    tukey: TukeySiteParams,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    let mut c = SyntheticConfig::small(n_sites, 1, n_time, n_real, seed).unwrap();
    c.tukey = tukey;
    c.temporal = TemporalSiteParams::new(vec![0.5], 1.0).unwrap();
    c.latvar = LatVarParams::INDEPENDENT;
    let (field, bundle) = generate_synthetic_truth(&c, None).unwrap();
    site_deviations(&field, &bundle.smoothed_mean.field)
}

fn step1(reps: usize) {
    let truth = TukeySiteParams::new(0.0, 1.0, 0.4, 0.1).unwrap();
    let sites = independent_sites(reps, 1140, 5, truth, 101);
    let t = Instant::now();
    let mut dg = Vec::new();
    let mut dh = Vec::new();
    for s in &sites {
        let f = fit_site(s, 1).unwrap();
        dg.push((f.tukey.g - truth.g).abs());
        dh.push((f.tukey.h - truth.h).abs());
    }
    println!("{reps} fits in {:.1} s", t.elapsed().as_secs_f64());
    // sampling distribution of the median over 100 sites
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut mg, mut mh) = (Vec::new(), Vec::new());
    for _ in 0..20_000 {
        let idx: Vec<usize> = (0..100).map(|_| rng.gen_range(0..reps)).collect();
        mg.push(median(&idx.iter().map(|&i| dg[i]).collect::<Vec<_>>()));
        mh.push(median(&idx.iter().map(|&i| dh[i]).collect::<Vec<_>>()));
    }
    println!("median |g-g0| {:.5} band [{:.5}, {:.5}]", median(&dg), quantile(&mg, 0.025), quantile(&mg, 0.975));
    println!("median |h-h0| {:.5} band [{:.5}, {:.5}]", median(&dh), quantile(&mh, 0.025), quantile(&mh, 0.975));
}

fn bic(reps: usize) {
    for (label, tukey) in [
        ("g=0.8", TukeySiteParams::new(0.0, 1.0, 0.8, 0.0).unwrap()),
        ("gaussian", TukeySiteParams::IDENTITY),
    ] {
        let t = Instant::now();
        let sites = independent_sites(reps, 1140, 1, tukey, 202);
        let deltas: Vec<f64> = sites.iter().map(|s| bic_delta_gaussian(s, 1).unwrap()).collect();
        let tgh = deltas.iter().filter(|&&d| d > 0.0).count();
        println!(
            "{label}: tukey preferred at {tgh}/{reps}, min delta {:.2}, max delta {:.2} ({:.1} s)",
            quantile(&deltas, 0.0),
            quantile(&deltas, 1.0),
            t.elapsed().as_secs_f64()
        );
    }
}

fn step2(reps: usize) {
    let n = 48;
    let truth = MaternSpectrumParams::new(1.0, 0.5, 1.0).unwrap();
    let b = synthesis_matrix(&EvolutionarySpectrum::stationary(&truth, n).unwrap());
    let classes = vec![SiteClass::Ocean; n];
    let alt = vec![0.0; n];
    let mut est = [Vec::new(), Vec::new(), Vec::new()];
    let t = Instant::now();
    for i in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let rows: Vec<Vec<f64>> = (0..5700)
            .map(|_| {
                let u = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
                (&b * u).iter().copied().collect()
            })
            .collect();
        let data = BandData::from_rows(n, rows.iter().map(|r| r.as_slice())).unwrap();
        let fit = fit_band(&data, &classes, &alt, LonSubModel::Full).unwrap();
        est[0].push(fit.params.beta_psi[OCEAN]);
        est[1].push(fit.params.beta_alpha[OCEAN]);
        est[2].push(fit.params.beta_nu[OCEAN]);
    }
    println!("{reps} fits in {:.1} s", t.elapsed().as_secs_f64());
    for (name, v) in ["psi", "alpha", "nu"].iter().zip(&est) {
        let (m, s) = mean_sd(v);
        println!("{name}: mean {m:.5} sd {s:.5} range [{:.5}, {:.5}]", quantile(v, 0.0), quantile(v, 1.0));
    }
}

fn step3(reps: usize) {
    let truth = LatVarParams::new(0.2, -0.1, 0.7, 0.5).unwrap();
    let mut est = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let t = Instant::now();
    for i in 0..reps {
        let stacks = simulate_stacks(&[LatVarParams::INDEPENDENT, truth], 48, 1140, 5, 5000 + i as u64).unwrap();
        let fit = fit_lat_pair(&stacks[0], &stacks[1], LatSubModel::Full, 10, 1).unwrap();
        est[0].push(fit.a);
        est[1].push(fit.b);
        est[2].push(fit.zeta);
        est[3].push(fit.eta);
    }
    println!("{reps} fits in {:.1} s", t.elapsed().as_secs_f64());
    for (name, v) in ["a", "b", "zeta", "eta"].iter().zip(&est) {
        let (m, s) = mean_sd(v);
        println!("{name}: mean {m:.5} sd {s:.5} range [{:.5}, {:.5}]", quantile(v, 0.0), quantile(v, 1.0));
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let reps = |default: usize| args.get(1).and_then(|s| s.parse().ok()).unwrap_or(default);
    match args.first().map(String::as_str) {
        Some("step1") => step1(reps(200)),
        Some("bic") => bic(reps(200)),
        Some("step2") => step2(reps(100)),
        Some("step3") => step3(reps(100)),
        _ => eprintln!("usage: calibration step1|bic|step2|step3 [replicates]"),
    }
}

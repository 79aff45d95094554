use std::fs;
use std::path::Path;
use std::process::Command;

use tgh_sg::grid::load_field;
use tgh_sg::pipeline::{self, Manifest, PipelineConfig};
use tgh_sg::surrogate::SyntheticConfig;
use tgh_sg::SgError;

fn synthetic_config(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: dir.to_path_buf(),
        synthetic: Some(SyntheticConfig::small(3, 16, 150, 3, 11).unwrap()),
        seed: 5,
        n_runs: 4,
        n_blocks: 5,
        n_sims: 10,
        p_max: 2,
        ..PipelineConfig::default()
    }
}

fn with_input(mut config: PipelineConfig) -> PipelineConfig {
    let (field, _) = pipeline::run_synthetic(&config).unwrap();
    config.input = Some(field);
    config.mask = Some(config.output_dir.join("synthetic").join("mask.csv"));
    config
}

#[test]
fn stages_need_their_upstream_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = with_input(synthetic_config(dir.path()));
    for result in [
        pipeline::run_step2(&config).map(|_| ()),
        pipeline::run_step3(&config).map(|_| ()),
        pipeline::run_generate(&config).map(|_| ()),
    ] {
        let err = result.unwrap_err();
        assert!(matches!(err, SgError::Staging { .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
    let no_input = PipelineConfig {
        input: None,
        ..config
    };
    assert!(matches!(pipeline::run_step1(&no_input), Err(SgError::Config(_))));
}

#[test]
fn end_to_end_on_a_small_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let config = with_input(synthetic_config(dir.path()));
    let s1 = pipeline::run_step1(&config).unwrap();
    assert_eq!(s1.sites.len(), 48);
    assert!(s1.sites.iter().all(|s| s.temporal.p <= 2 && s.loglik.is_finite()));
    let s2 = pipeline::run_step2(&config).unwrap();
    assert_eq!(s2.bands.len(), 3);
    assert!(s2.bands.iter().all(|b| b.fit.loglik >= b.fit.lao_loglik));
    let s3 = pipeline::run_step3(&config).unwrap();
    assert_eq!(s3.bands.len(), 3);
    assert!(s3.bands[0].per_block_estimates.is_empty());
    assert!(s3.bands[1..].iter().all(|b| b.per_block_estimates.len() == 5));

    let bundle = pipeline::load_bundle(&config).unwrap();
    bundle.validate().unwrap();
    let path = pipeline::run_generate(&config).unwrap();
    let first = fs::read(&path).unwrap();
    pipeline::run_generate(&config).unwrap();
    assert_eq!(first, fs::read(&path).unwrap(), "same seed must give identical bytes");
    let runs = load_field(&path).unwrap();
    assert_eq!(runs.spec.n_real, 4);
    assert_eq!(runs.spec.n_time(), 150);

    let reseeded = PipelineConfig {
        seed: 6,
        output_dir: dir.path().join("other"),
        ..config.clone()
    };
    for stage in ["step1", "step2", "step3"] {
        let (from, to) = (dir.path().join(stage), reseeded.output_dir.join(stage));
        fs::create_dir_all(&to).unwrap();
        for entry in fs::read_dir(from).unwrap() {
            let entry = entry.unwrap();
            fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
        }
    }
    let other = load_field(pipeline::run_generate(&reseeded).unwrap()).unwrap();
    assert_ne!(other.values, runs.values);

    let summary = pipeline::run_diagnose(&PipelineConfig {
        trend_window: Some([100, 150]),
        ..config.clone()
    })
    .unwrap();
    assert_eq!(summary.n_sites, 48);
    let s = summary.trend_ssim.unwrap();
    assert!((-1.0..=1.0).contains(&s), "{s}");
    assert!((0.0..=1.0).contains(&summary.tukey_preferred_fraction));
    assert_eq!(summary.ew_distance_percentiles.len(), summary.ns_distance_percentiles.len());

    let wpd = pipeline::run_wpd(&config).unwrap();
    let rows = fs::read_to_string(wpd).unwrap().lines().count();
    // header plus 4 runs for each of the 13 Januaries in 150 months
    assert_eq!(rows, 1 + 4 * 13);

    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("generate").join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_hash, config.hash());
    assert_eq!(manifest.seed, 5);
    assert!(!manifest.inputs.is_empty() && !manifest.outputs.is_empty());
}

#[test]
fn overrides_reach_nested_keys() {
    let base = PipelineConfig::default();
    let c = base
        .with_overrides(&["p_max=2".into(), "wpd.rho=1.2".into(), "lon_sub_model=lao".into()])
        .unwrap();
    assert_eq!(c.p_max, 2);
    assert_eq!(c.wpd.rho, 1.2);
    assert_ne!(c.hash(), base.hash());
    assert!(matches!(base.with_overrides(&["no_such_key=1".into()]), Err(SgError::Config(_))));
    assert!(matches!(base.with_overrides(&["p_max".into()]), Err(SgError::Config(_))));
    assert!(matches!(
        base.with_overrides(&["lambda=0".into()]).unwrap().validate(),
        Err(SgError::Config(_))
    ));
}

#[test]
fn command_line_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_tgh-sg");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(exe).args(["show-config", "--set", "p_max=2"]).output().unwrap();
    assert!(out.status.success());
    let shown: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(shown["p_max"], 2);

    let empty = format!("output_dir={}", dir.path().display());
    let out = Command::new(exe).args(["fit-step3", "--set", &empty]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = Command::new(exe).arg("fit-step1").arg("-c").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let garbage = dir.path().join("field.bin");
    fs::write(&garbage, b"not a container").unwrap();
    let input = format!("input={}", garbage.display());
    let out = Command::new(exe).args(["fit-step1", "--set", &input, "--set", &empty]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

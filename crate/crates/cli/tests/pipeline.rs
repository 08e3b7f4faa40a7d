//! End-to-end runs of the pipeline on small generated worlds.

use std::path::Path;
use std::process::Command;

use hubwind::spatial::SpatialModelFile;
use hubwind::synth::SynthConfig;
use hubwind_cli::config::GridSpec;
use hubwind_cli::export::{export_grid, idw_atlas};
use hubwind_cli::ingest::{format_timestamp, read_targets};
use hubwind_cli::pipeline::{
    run_pipeline, run_stage, spatial_stem, Stage, StageOutcome, StationContext, PREDICTIONS, SPATIAL_DIR,
    SPATIAL_REPORT,
};
use hubwind_cli::simulate::simulate;
use hubwind_cli::PipelineConfig;

fn small_config(root: &Path) -> PipelineConfig {
    let synthetic = SynthConfig { seed: 5, n_stations: 6, n_steps: 720, ..SynthConfig::default() };
    let mut cfg = PipelineConfig { deterministic: true, synthetic, ..PipelineConfig::default() };
    cfg.shear.additive.s1_basis = 10;
    cfg.resolve_paths(root);
    cfg
}

fn outcomes(run: Vec<(Stage, StageOutcome)>) -> Vec<StageOutcome> {
    run.into_iter().map(|(_, o)| o).collect()
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn fresh_stages_are_skipped_until_inputs_change() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    simulate(&cfg).unwrap();
    assert!(outcomes(run_pipeline(&cfg, false).unwrap()).iter().all(|o| *o == StageOutcome::Ran));
    assert!(outcomes(run_pipeline(&cfg, false).unwrap()).iter().all(|o| *o == StageOutcome::Skipped));

    // a spatial setting only invalidates the spatial stages onwards
    cfg.spatial.interval_level = 0.9;
    use StageOutcome::{Ran, Skipped};
    assert_eq!(outcomes(run_pipeline(&cfg, false).unwrap()), vec![Skipped, Skipped, Ran, Ran, Ran]);

    assert!(outcomes(run_pipeline(&cfg, true).unwrap()).iter().all(|o| *o == Ran));
}

#[test]
fn deleted_output_is_rebuilt_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    simulate(&cfg).unwrap();
    run_pipeline(&cfg, false).unwrap();
    let path = cfg.out(PREDICTIONS);
    let before = std::fs::read(&path).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert_eq!(run_stage(&cfg, Stage::Predict, false).unwrap(), StageOutcome::Ran);
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn months_without_data_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.months = vec!["2023-01".into(), "2030-06".into()];
    simulate(&cfg).unwrap();
    run_pipeline(&cfg, false).unwrap();
    let rows = read_csv(&cfg.out(SPATIAL_REPORT));
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| &r[0] == "2023-01"));
}

#[test]
fn evaluation_needs_farm_observations() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.data.farm_obs = None;
    simulate(&cfg).unwrap();
    let run = run_pipeline(&cfg, false).unwrap();
    assert_eq!(run.last().unwrap(), &(Stage::Evaluate, StageOutcome::NotApplicable));
}

fn grid(month: &str, h: f64, x: (f64, f64), y: (f64, f64), spacing: f64, ts: Option<String>) -> GridSpec {
    GridSpec {
        month: month.into(),
        hub_height: h,
        x_min: x.0,
        x_max: x.1,
        y_min: y.0,
        y_max: y.1,
        spacing_km: spacing,
        timestamp: ts,
    }
}

#[test]
fn export_grid_counts_and_far_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    simulate(&cfg).unwrap();
    run_pipeline(&cfg, false).unwrap();

    let path = export_grid(&cfg, &grid("2023-01", 80.0, (0.0, 400.0), (0.0, 300.0), 50.0, None)).unwrap();
    assert_eq!(read_csv(&path).len(), 9 * 7);

    // far enough that every station correlation underflows
    let path = export_grid(&cfg, &grid("2023-01", 80.0, (1e5, 1e5 + 10.0), (1e5, 1e5), 10.0, None)).unwrap();
    let rows = read_csv(&path);
    assert_eq!(rows.len(), 2);
    let file: SpatialModelFile = serde_json::from_slice(
        &std::fs::read(cfg.out(SPATIAL_DIR).join(format!("{}.json", spatial_stem("2023-01", 80.0)))).unwrap(),
    )
    .unwrap();
    let ctx = StationContext::load(&cfg).unwrap();
    let targets = read_targets(&cfg.data.targets, None).unwrap();
    let atlas: Vec<_> = ctx
        .stations
        .iter()
        .map(|s| (s.location, s.mean50, s.mean100))
        .chain(targets.iter().map(|t| (t.location, t.mean50, t.mean100)))
        .collect();
    for r in rows {
        let at = hubwind::GeoLocation::new(r[0].parse().unwrap(), r[1].parse().unwrap()).unwrap();
        let (m50, m100) = idw_atlas(&at, &atlas);
        let c = hubwind::distrib::gwa_mean_sqrt_at_height(m50, m100, 80.0, 2.0).unwrap();
        let m = file.theta.mean(c);
        let speed: f64 = r[2].parse().unwrap();
        assert!((speed - (m * m + file.theta.target_prior_variance())).abs() < 1e-9 * speed);
    }
}

#[test]
fn export_grid_reproduces_a_noiseless_station() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    simulate(&cfg).unwrap();
    run_pipeline(&cfg, false).unwrap();

    // strip every noise term from the fitted month
    let model_path = cfg.out(SPATIAL_DIR).join(format!("{}.json", spatial_stem("2023-01", 80.0)));
    let mut file: SpatialModelFile = serde_json::from_slice(&std::fs::read(&model_path).unwrap()).unwrap();
    file.theta.sigma_eps = 0.0;
    file.gam_variances.iter_mut().for_each(|v| *v = 0.0);
    std::fs::write(&model_path, serde_json::to_vec(&file).unwrap()).unwrap();

    let ctx = StationContext::load(&cfg).unwrap();
    let order: Vec<usize> = file.station_ids.iter().map(|id| ctx.index_of(id).unwrap()).collect();
    let (times, rows) = ctx.rows("2023-01", 80.0, &order).unwrap();
    let t = times.len() / 2;
    let s = (0..order.len()).find(|s| rows[t][*s].is_some()).unwrap();
    let loc = file.stations[s];
    let spec = grid("2023-01", 80.0, (loc.x, loc.x + 5.0), (loc.y, loc.y), 5.0, Some(format_timestamp(times[t])));
    let out = read_csv(&export_grid(&cfg, &spec).unwrap());
    let expect = rows[t][s].unwrap().powi(2);
    let got: f64 = out[0][2].parse().unwrap();
    assert!((got - expect).abs() < 1e-8 * expect, "{got} vs {expect}");
    assert_eq!(out[0][3], out[0][4]);
}

#[test]
fn binary_runs_and_tags_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("hubwind.toml");
    std::fs::write(
        &config,
        "deterministic = true\n[synthetic]\nn_stations = 5\nn_steps = 300\n[shear.additive]\ns1_basis = 8\n",
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_hubwind");
    let run = |args: &[&str]| Command::new(bin).arg("--config").arg(&config).args(args).output().unwrap();

    assert!(run(&["simulate"]).status.success());
    let out = run(&["run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/metrics.csv").exists());

    // a reanalysis row off the ten-minute grid
    let re = dir.path().join("data/reanalysis.csv");
    let mut text = std::fs::read_to_string(&re).unwrap();
    text.push_str("ST01,2023-01-05T00:03:00Z,5,6,7,8\n");
    std::fs::write(&re, text).unwrap();
    let out = run(&["downscale"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[downscale]"), "{err}");
}

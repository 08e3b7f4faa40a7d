//! Writes a synthetic world as the pipeline's input tables, plus a
//! `truth.json` holding the generating parameters.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hubwind::spatial::SpatialHyperparams;
use hubwind::synth::{ShearTruth, SynthConfig, SyntheticWorld};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::ingest::format_timestamp;
use crate::output::{num, write_csv, write_json};

#[derive(Serialize)]
struct Truth<'a> {
    config: &'a SynthConfig,
    theta_100m: SpatialHyperparams,
    shear: ShearTruth,
}

/// Generates the configured world and writes it to the data paths. Returns
/// the world and the files written.
pub fn simulate(cfg: &PipelineConfig) -> Result<(SyntheticWorld, Vec<PathBuf>)> {
    let world = SyntheticWorld::generate(&cfg.synthetic).context("generating synthetic world")?;
    let files = write_world(&world, cfg)?;
    Ok((world, files))
}

pub fn write_world(world: &SyntheticWorld, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let d = &cfg.data;
    let mut written = Vec::new();
    let mut emit = |path: &Path, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        write_csv(path, header, &rows)?;
        written.push(path.to_path_buf());
        Ok(())
    };

    let rows = world
        .stations
        .iter()
        .zip(&world.station_weibull)
        .map(|(s, w)| {
            vec![
                s.id.clone(),
                num(s.location.x),
                num(s.location.y),
                num(w[0].k),
                num(w[0].lambda),
                num(w[1].k),
                num(w[1].lambda),
                num(w[2].k),
                num(w[2].lambda),
                num(s.mean50),
                num(s.mean100),
            ]
        })
        .collect();
    emit(
        &d.stations,
        &[
            "station_id",
            "x_km",
            "y_km",
            "k_50",
            "lambda_50",
            "k_75",
            "lambda_75",
            "k_100",
            "lambda_100",
            "mean50",
            "mean100",
        ],
        rows,
    )?;

    let ts: Vec<String> = world.times.iter().map(|t| format_timestamp(*t)).collect();
    let mut rows = Vec::new();
    for (s, st) in world.stations.iter().enumerate() {
        for (t, w) in world.station_w10[s].iter().enumerate() {
            if let Some(w) = w {
                rows.push(vec![st.id.clone(), ts[t].clone(), num(*w), num(world.station_direction[s][t])]);
            }
        }
    }
    emit(&d.winds_10m, &["station_id", "timestamp", "speed_ms", "direction_deg"], rows)?;

    let mut rows = Vec::new();
    for (s, st) in world.stations.iter().enumerate() {
        for (t, r) in world.reanalysis[s].iter().enumerate() {
            rows.push(vec![st.id.clone(), ts[t].clone(), num(r[0]), num(r[1]), num(r[2]), num(r[3])]);
        }
    }
    emit(&d.reanalysis, &["station_id", "timestamp", "w10", "w50", "w75", "w100"], rows)?;

    let rows = world
        .targets
        .iter()
        .zip(&world.config.target_heights)
        .map(|(s, h)| vec![s.id.clone(), num(s.location.x), num(s.location.y), num(*h), num(s.mean50), num(s.mean100)])
        .collect();
    emit(&d.targets, &["site_id", "x_km", "y_km", "hub_height_m", "mean50", "mean100"], rows)?;

    if let Some(path) = &d.farm_obs {
        let mut rows = Vec::new();
        for (j, site) in world.targets.iter().enumerate() {
            for (t, stamp) in ts.iter().enumerate() {
                rows.push(vec![
                    site.id.clone(),
                    stamp.clone(),
                    num(world.target_truth[j][t]),
                    num(world.farm_avg[j][t]),
                ]);
            }
        }
        emit(path, &["site_id", "timestamp", "speed_max", "speed_avg"], rows)?;
    }

    if let Some(path) = &d.baseline {
        let mut rows = Vec::new();
        for (j, site) in world.targets.iter().enumerate() {
            for (i, b) in world.baseline[j].iter().enumerate() {
                rows.push(vec![site.id.clone(), ts[6 * i].clone(), num(b[0]), num(b[1])]);
            }
        }
        emit(path, &["site_id", "timestamp", "w10", "w100"], rows)?;
    }

    let truth_path = d.stations.parent().unwrap_or(Path::new(".")).join("truth.json");
    write_json(
        &truth_path,
        &Truth { config: &world.config, theta_100m: world.config.theta, shear: world.config.shear },
    )?;
    written.push(truth_path);
    Ok(written)
}

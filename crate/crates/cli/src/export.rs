//! Posterior maps on a regular lattice.
//!
//! Lattice nodes have no atlas means of their own, so the mean covariate at a
//! node uses inverse-squared-distance weighting of the atlas means at the
//! stations and targets. A node on top of a site takes that site's values.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use hubwind::distrib::gwa_mean_sqrt_at_height;
use hubwind::spatial::{KrigingWeights, PredictionTarget};
use hubwind::GeoLocation;

use crate::config::{GridSpec, PipelineConfig};
use crate::ingest::{format_timestamp, parse_timestamp, read_targets};
use crate::output::{num, write_csv};
use crate::pipeline::{load_spatial_models, spatial_stem, station_order, StationContext};

/// Inverse-squared-distance interpolation of `(mean50, mean100)`.
pub fn idw_atlas(at: &GeoLocation, sites: &[(GeoLocation, f64, f64)]) -> (f64, f64) {
    let (mut w, mut a, mut b) = (0.0, 0.0, 0.0);
    for (loc, m50, m100) in sites {
        let d2 = (loc.x - at.x).powi(2) + (loc.y - at.y).powi(2);
        if d2 < 1e-18 {
            return (*m50, *m100);
        }
        w += 1.0 / d2;
        a += m50 / d2;
        b += m100 / d2;
    }
    (a / w, b / w)
}

/// Writes `grid_<month>_h<height>[_<time>].csv` with one row per node:
/// `x_km, y_km, speed_mean, lo, hi`. Without a timestamp in the spec the
/// columns are averages over every time step of the month.
pub fn export_grid(cfg: &PipelineConfig, spec: &GridSpec) -> Result<PathBuf> {
    let nodes = spec.nodes()?;
    let ctx = StationContext::load(cfg)?;
    let targets = read_targets(&cfg.data.targets, cfg.projection.as_ref())?;
    let stem = spatial_stem(&spec.month, spec.hub_height);
    let (file, model) = load_spatial_models(cfg)?
        .into_iter()
        .find(|(f, _)| spatial_stem(&f.month, f.target_height) == stem)
        .ok_or_else(|| anyhow!("no spatial model {stem}; run fit-spatial for that month and height"))?;

    let atlas: Vec<(GeoLocation, f64, f64)> = ctx
        .stations
        .iter()
        .map(|s| (s.location, s.mean50, s.mean100))
        .chain(targets.iter().map(|t| (t.location, t.mean50, t.mean100)))
        .collect();
    let pts = nodes
        .iter()
        .map(|(x, y)| {
            let location = GeoLocation::new(*x, *y)?;
            let (m50, m100) = idw_atlas(&location, &atlas);
            let c = gwa_mean_sqrt_at_height(m50, m100, spec.hub_height, cfg.spatial.atlas_shape)?;
            Ok(PredictionTarget { location, gwa_mean_sqrt: c })
        })
        .collect::<Result<Vec<_>>>()?;

    let order = station_order(&ctx, &file)?;
    let (times, mut rows) = ctx.rows(&file.month, spec.hub_height, &order)?;
    let mut name = format!("grid_{stem}");
    if let Some(ts) = &spec.timestamp {
        let t = parse_timestamp(ts)?;
        let i = times.binary_search(&t).map_err(|_| anyhow!("no station data at {ts}"))?;
        rows = vec![rows.swap_remove(i)];
        name.push('_');
        name.push_str(&format_timestamp(t).replace([':', '-'], ""));
    }
    if rows.is_empty() {
        return Err(anyhow!("no station data in {}", file.month));
    }

    let z = hubwind::special::two_sided_z(cfg.spatial.interval_level);
    let mut cache: HashMap<Vec<usize>, KrigingWeights> = HashMap::new();
    let mut sums = vec![[0.0f64; 3]; pts.len()];
    for row in &rows {
        let present: Vec<usize> = (0..row.len()).filter(|i| row[*i].is_some_and(f64::is_finite)).collect();
        if !cache.contains_key(&present) {
            let w = KrigingWeights::new(&model, &pts, present.clone()).context("kriging weights")?;
            cache.insert(present.clone(), w);
        }
        for (acc, r) in sums.iter_mut().zip(cache[&present].apply(&model, row, z)) {
            acc[0] += r.speed_mean;
            acc[1] += r.lo;
            acc[2] += r.hi;
        }
    }
    let n = rows.len() as f64;
    let out: Vec<Vec<String>> = nodes
        .iter()
        .zip(&sums)
        .map(|((x, y), s)| vec![num(*x), num(*y), num(s[0] / n), num(s[1] / n), num(s[2] / n)])
        .collect();
    let path = cfg.out(&format!("{name}.csv"));
    write_csv(&path, &["x_km", "y_km", "speed_mean", "lo", "hi"], &out)?;
    Ok(path)
}

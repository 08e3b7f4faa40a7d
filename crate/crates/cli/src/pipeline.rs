//! The staged pipeline: downscale, fit-shear, fit-spatial, predict and
//! evaluate. Each stage reads its inputs from disk, writes its outputs
//! atomically under the output directory, and is skipped when a previous run
//! recorded the same input hash and its outputs are intact.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hubwind::distrib::{gwa_mean_sqrt_at_height, quantile_map, VerticalProfile};
use hubwind::eval::{baseline_hub_speed, compute_metrics, empirical_coverage, hourly_to_ten_minute, wake_adjust};
use hubwind::shear::{
    AdditiveShearModel, ConstantAlphaModel, HarmonicAlphaModel, ProfileRecord, ShearModel, ShearTrainingSet,
};
use hubwind::spatial::{
    fit_hyperparams, initial_hyperparams, predict_series, FittedSpatialModel, MonthlyDataset, PredictionResult,
    PredictionTarget, SpatialModelFile,
};
use hubwind::TimeStamp;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PipelineConfig, ShearSettings};
use crate::ingest::{
    format_timestamp, month_of, parse_timestamp, read_baseline, read_downscaled, read_farm_obs, read_predictions,
    read_reanalysis, read_stations, read_targets, read_winds, StationMeta, TargetMeta, WindSeries,
};
use crate::output::{num, opt, write_csv, write_json};
use crate::stages::{list_files, InputHash, StageLedger};

pub const DOWNSCALED: &str = "downscaled.csv";
pub const SHEAR_DIR: &str = "shear";
pub const SHEAR_REPORT: &str = "shear_report.csv";
pub const SPATIAL_DIR: &str = "spatial";
pub const SPATIAL_REPORT: &str = "spatial_report.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const METRICS: &str = "metrics.csv";
pub const COVERAGE: &str = "coverage.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Downscale,
    FitShear,
    FitSpatial,
    Predict,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Downscale, Stage::FitShear, Stage::FitSpatial, Stage::Predict, Stage::Evaluate];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Downscale => "downscale",
            Stage::FitShear => "fit-shear",
            Stage::FitSpatial => "fit-spatial",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Inputs and outputs unchanged since the last run.
    Skipped,
    /// Nothing to do, e.g. evaluation without farm observations.
    NotApplicable,
}

/// Runs `f` on a thread pool sized by the config; one thread in
/// deterministic mode.
pub fn with_pool<R: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> R + Send) -> Result<R> {
    let threads = if cfg.deterministic { 1 } else { cfg.threads };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}

/// Runs one stage, tagging any error with the stage name.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, force: bool) -> Result<StageOutcome> {
    let go = || -> Result<StageOutcome> {
        let Some(inputs) = stage_inputs(cfg, stage)? else {
            log::warn!("{}: nothing to do", stage.name());
            return Ok(StageOutcome::NotApplicable);
        };
        let mut ledger = StageLedger::open(&cfg.output_dir)?;
        if !force && ledger.is_fresh(stage.name(), &inputs) {
            log::info!("{}: up to date, skipped", stage.name());
            return Ok(StageOutcome::Skipped);
        }
        let outputs = with_pool(cfg, || match stage {
            Stage::Downscale => downscale(cfg),
            Stage::FitShear => fit_shear(cfg),
            Stage::FitSpatial => fit_spatial(cfg),
            Stage::Predict => predict(cfg),
            Stage::Evaluate => evaluate(cfg),
        })??;
        ledger.record(stage.name(), inputs, &outputs)?;
        log::info!("{}: wrote {} file(s)", stage.name(), outputs.len());
        Ok(StageOutcome::Ran)
    };
    go().map_err(|e| anyhow!("[{}] {e:#}", stage.name()))
}

/// Runs every stage in order.
pub fn run_pipeline(cfg: &PipelineConfig, force: bool) -> Result<Vec<(Stage, StageOutcome)>> {
    Stage::ALL.iter().map(|s| Ok((*s, run_stage(cfg, *s, force)?))).collect()
}

fn farm_path(cfg: &PipelineConfig) -> Option<&Path> {
    cfg.data.farm_obs.as_deref().filter(|p| p.exists())
}

fn baseline_path(cfg: &PipelineConfig) -> Option<&Path> {
    cfg.data.baseline.as_deref().filter(|p| p.exists())
}

/// Input hash for a stage, or `None` when the stage has nothing to do.
fn stage_inputs(cfg: &PipelineConfig, stage: Stage) -> Result<Option<String>> {
    let h = InputHash::new(stage.name());
    let h = match stage {
        Stage::Downscale => h.file(&cfg.data.stations)?.file(&cfg.data.reanalysis)?,
        Stage::FitShear => {
            h.settings(&cfg.shear)?.file(&cfg.data.stations)?.file(&cfg.data.winds_10m)?.file(&cfg.out(DOWNSCALED))?
        }
        Stage::FitSpatial => h
            .settings(&(&cfg.spatial, &cfg.months, &cfg.projection))?
            .file(&cfg.data.stations)?
            .file(&cfg.data.targets)?
            .file(&cfg.data.winds_10m)?
            .dir(&cfg.out(SHEAR_DIR))?,
        Stage::Predict => h
            .settings(&(&cfg.spatial, &cfg.projection))?
            .file(&cfg.data.stations)?
            .file(&cfg.data.targets)?
            .file(&cfg.data.winds_10m)?
            .dir(&cfg.out(SHEAR_DIR))?
            .dir(&cfg.out(SPATIAL_DIR))?,
        Stage::Evaluate => {
            let Some(farm) = farm_path(cfg) else { return Ok(None) };
            let h = h.settings(&cfg.evaluate)?.file(&cfg.data.targets)?.file(farm)?.file(&cfg.out(PREDICTIONS))?;
            match baseline_path(cfg) {
                Some(b) => h.file(b)?,
                None => h,
            }
        }
    };
    Ok(Some(h.finish()))
}

/// Quantile-maps the reanalysis 50, 75 and 100 m series of every station onto
/// its Weibull climatology.
pub fn downscale(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let stations = read_stations(&cfg.data.stations, cfg.projection.as_ref())?;
    let reanalysis = read_reanalysis(&cfg.data.reanalysis)?;
    let mut rows = Vec::new();
    for st in &stations {
        let Some(series) = reanalysis.get(&st.id).filter(|s| !s.rows.is_empty()) else {
            log::warn!("station {}: no reanalysis rows, skipped", st.id);
            continue;
        };
        let mut mapped = Vec::with_capacity(3);
        for (k, params) in st.weibull.iter().enumerate() {
            let col: Vec<f64> = series.rows.iter().map(|r| r[k + 1]).collect();
            mapped.push(quantile_map(&col, params).with_context(|| format!("station {}", st.id))?);
        }
        for (i, t) in series.times.iter().enumerate() {
            rows.push(vec![
                st.id.clone(),
                format_timestamp(*t),
                num(series.rows[i][0]),
                num(mapped[0][i]),
                num(mapped[1][i]),
                num(mapped[2][i]),
            ]);
        }
    }
    let path = cfg.out(DOWNSCALED);
    write_csv(&path, &["station_id", "timestamp", "w10", "w50", "w75", "w100"], &rows)?;
    Ok(vec![path])
}

/// Holdout score of one extrapolation model at one station.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShearScore {
    pub model: &'static str,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub holdout_rmse: Option<f64>,
}

/// A station's deployed additive model and the comparison of all three
/// models on a trailing holdout.
#[derive(Debug, Clone)]
pub struct StationShearFit {
    pub model: AdditiveShearModel,
    pub scores: Vec<ShearScore>,
}

/// Fits the three models on the leading share of `records` (time-ordered),
/// scores them on the rest at the reanalysis levels, then refits the
/// additive model on everything.
pub fn fit_station_shear(records: &[ProfileRecord], settings: &ShearSettings) -> Result<StationShearFit> {
    let n = records.len();
    let n_train = n - ((n as f64) * settings.holdout_fraction).floor() as usize;
    let train = ShearTrainingSet::from_profiles(&records[..n_train])?;
    let test = ShearTrainingSet::from_levels(&records[n_train..])?;

    let additive = AdditiveShearModel::fit(&train, &settings.additive)?;
    let models = [
        ShearModel::Constant(ConstantAlphaModel { alpha: settings.constant_alpha }),
        ShearModel::Harmonic(HarmonicAlphaModel::fit(&train, settings.harmonics)?),
        ShearModel::Additive(Box::new(additive.clone())),
    ];
    let scores = models
        .iter()
        .map(|m| {
            let rmse = if test.is_empty() { None } else { Some(m.rmse(&test)?) };
            Ok(ShearScore { model: m.name(), n_train_rows: train.len(), n_test_rows: test.len(), holdout_rmse: rmse })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = if n_train == n {
        additive
    } else {
        AdditiveShearModel::fit(&ShearTrainingSet::from_profiles(records)?, &settings.additive)?
    };
    Ok(StationShearFit { model, scores })
}

/// Joins downscaled profiles with the station's observed direction.
fn profile_records(series: &crate::ingest::ReanalysisSeries, winds: &WindSeries) -> Result<Vec<ProfileRecord>> {
    let mut out = Vec::with_capacity(series.times.len());
    for (t, r) in series.times.iter().zip(&series.rows) {
        let Some((_, direction)) = winds.get(*t) else { continue };
        out.push(ProfileRecord {
            hour: t.hour_of_day(),
            w10: r[0],
            direction,
            profile: VerticalProfile::new(r[1], r[2], r[3])?,
        });
    }
    Ok(out)
}

pub fn fit_shear(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let stations = read_stations(&cfg.data.stations, cfg.projection.as_ref())?;
    let downscaled = read_downscaled(&cfg.out(DOWNSCALED))?;
    let winds = read_winds(&cfg.data.winds_10m)?;
    let empty = WindSeries::default();

    let fits: Vec<Result<Option<StationShearFit>>> = stations
        .par_iter()
        .map(|st| {
            let Some(series) = downscaled.get(&st.id) else { return Ok(None) };
            let records = profile_records(series, winds.get(&st.id).unwrap_or(&empty))?;
            if records.is_empty() {
                log::warn!("station {}: no reanalysis times with a 10 m direction, skipped", st.id);
                return Ok(None);
            }
            fit_station_shear(&records, &cfg.shear).with_context(|| format!("station {}", st.id)).map(Some)
        })
        .collect();

    let dir = cfg.out(SHEAR_DIR);
    let mut outputs = Vec::new();
    // drop models of stations no longer present
    for old in list_files(&dir)? {
        std::fs::remove_file(&old)?;
    }
    let mut report = Vec::new();
    for (st, fit) in stations.iter().zip(fits) {
        let Some(fit) = fit? else { continue };
        let path = dir.join(format!("{}.json", st.id));
        write_json(&path, &fit.model)?;
        outputs.push(path);
        for s in &fit.scores {
            let additive = s.model == "additive";
            report.push(vec![
                st.id.clone(),
                s.model.to_string(),
                s.n_train_rows.to_string(),
                s.n_test_rows.to_string(),
                opt(s.holdout_rmse),
                if additive { num(fit.model.edf) } else { String::new() },
                if additive { num(fit.model.residual_sd()) } else { String::new() },
            ]);
        }
    }
    if outputs.len() < 3 {
        bail!("only {} station model(s) fitted; the spatial stage needs 3", outputs.len());
    }
    let path = cfg.out(SHEAR_REPORT);
    write_csv(
        &path,
        &["station_id", "model", "n_train_rows", "n_test_rows", "holdout_rmse", "edf", "residual_sd"],
        &report,
    )?;
    outputs.push(path);
    Ok(outputs)
}

/// One time step across stations; `None` where a station has no data.
pub type StationRow = Vec<Option<f64>>;

/// Stations with a fitted shear model, their 10 m series and models.
pub struct StationContext {
    pub stations: Vec<StationMeta>,
    pub models: Vec<AdditiveShearModel>,
    pub winds: Vec<WindSeries>,
}

impl StationContext {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let all = read_stations(&cfg.data.stations, cfg.projection.as_ref())?;
        let mut winds = read_winds(&cfg.data.winds_10m)?;
        let dir = cfg.out(SHEAR_DIR);
        let mut ctx = Self { stations: Vec::new(), models: Vec::new(), winds: Vec::new() };
        for st in all {
            let path = dir.join(format!("{}.json", st.id));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            let model: AdditiveShearModel =
                serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
            model.check_format()?;
            ctx.winds.push(winds.remove(&st.id).unwrap_or_default());
            ctx.stations.push(st);
            ctx.models.push(model);
        }
        if ctx.stations.len() < 3 {
            bail!("need fitted shear models for at least 3 stations, found {}", ctx.stations.len());
        }
        Ok(ctx)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    /// Months present in any station series.
    pub fn months(&self) -> BTreeSet<String> {
        self.winds.iter().flat_map(|w| w.times.iter().map(|t| month_of(*t))).collect()
    }

    /// Square-root hub-height estimates at the given stations for every time
    /// in `month` at which any of them reports.
    pub fn rows(&self, month: &str, h: f64, order: &[usize]) -> Result<(Vec<TimeStamp>, Vec<StationRow>)> {
        let times: BTreeSet<TimeStamp> =
            order.iter().flat_map(|i| self.winds[*i].times.iter().copied().filter(|t| month_of(*t) == month)).collect();
        let mut rows = Vec::with_capacity(times.len());
        for t in &times {
            let hour = t.hour_of_day();
            let row = order
                .iter()
                .map(|i| match self.winds[*i].get(*t) {
                    Some((w10, dir)) => self.models[*i].predict(w10, h, hour, dir).map(|p| Some(p.0)),
                    None => Ok(None),
                })
                .collect::<hubwind::Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok((times.into_iter().collect(), rows))
    }
}

/// File stem for a month and hub height, e.g. `2023-01_h80`.
pub fn spatial_stem(month: &str, h: f64) -> String {
    format!("{month}_h{}", format!("{h}").replace('.', "p"))
}

fn selected_months(cfg: &PipelineConfig, present: &BTreeSet<String>) -> Vec<String> {
    if cfg.months.is_empty() {
        return present.iter().cloned().collect();
    }
    cfg.months
        .iter()
        .filter(|m| {
            let ok = present.contains(*m);
            if !ok {
                log::warn!("month {m} has no station data, skipped");
            }
            ok
        })
        .cloned()
        .collect()
}

fn hub_heights(targets: &[TargetMeta]) -> Vec<f64> {
    let mut hs: Vec<f64> = targets.iter().map(|t| t.hub_height).collect();
    hs.sort_by(f64::total_cmp);
    hs.dedup();
    hs
}

pub fn fit_spatial(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ctx = StationContext::load(cfg)?;
    let targets = read_targets(&cfg.data.targets, cfg.projection.as_ref())?;
    let months = selected_months(cfg, &ctx.months());
    if months.is_empty() {
        bail!("no months to fit");
    }
    let jobs: Vec<(String, f64)> =
        months.iter().flat_map(|m| hub_heights(&targets).into_iter().map(move |h| (m.clone(), h))).collect();
    let order: Vec<usize> = (0..ctx.stations.len()).collect();
    let ids: Vec<String> = ctx.stations.iter().map(|s| s.id.clone()).collect();
    let shape = cfg.spatial.atlas_shape;

    let fitted: Vec<Result<(FittedSpatialModel, usize, usize)>> = jobs
        .par_iter()
        .map(|(month, h)| {
            let go = || -> Result<(FittedSpatialModel, usize, usize)> {
                let (_, rows) = ctx.rows(month, *h, &order)?;
                let gam: Vec<f64> = ctx.models.iter().map(|m| m.residual_variance).collect();
                let cov = ctx
                    .stations
                    .iter()
                    .map(|s| gwa_mean_sqrt_at_height(s.mean50, s.mean100, *h, shape))
                    .collect::<hubwind::Result<Vec<_>>>()?;
                let locs = ctx.stations.iter().map(|s| s.location).collect();
                let data = MonthlyDataset::new(locs, &rows, gam, cov, *h)?;
                let init = initial_hyperparams(&data);
                let mut model = fit_hyperparams(&data, &init, &cfg.spatial.optimizer)?;
                model.month = month.clone();
                Ok((model, data.n_times(), data.dropped_rows))
            };
            go().with_context(|| format!("month {month}, hub height {h} m"))
        })
        .collect();

    let dir = cfg.out(SPATIAL_DIR);
    for old in list_files(&dir)? {
        std::fs::remove_file(&old)?;
    }
    let mut outputs = Vec::new();
    let mut report = Vec::new();
    for ((month, h), res) in jobs.iter().zip(fitted) {
        let (model, n_t, dropped) = res?;
        let path = dir.join(format!("{}.json", spatial_stem(month, *h)));
        write_json(&path, &model.to_file(&ids))?;
        outputs.push(path);
        let th = model.theta;
        report.push(vec![
            month.clone(),
            num(*h),
            ids.len().to_string(),
            n_t.to_string(),
            dropped.to_string(),
            num(th.kappa),
            num(th.sigma_f),
            num(th.sigma_eps),
            num(th.beta0),
            num(th.beta1),
            num(model.log_likelihood),
            model.iterations.to_string(),
            model.status.as_str().to_string(),
        ]);
    }
    let path = cfg.out(SPATIAL_REPORT);
    write_csv(
        &path,
        &[
            "month",
            "hub_height_m",
            "n_stations",
            "n_times",
            "dropped_times",
            "kappa",
            "sigma_f",
            "sigma_eps",
            "beta0",
            "beta1",
            "log_likelihood",
            "iterations",
            "status",
        ],
        &report,
    )?;
    outputs.push(path);
    Ok(outputs)
}

/// Every fitted spatial model in the output directory, in file-name order.
pub fn load_spatial_models(cfg: &PipelineConfig) -> Result<Vec<(SpatialModelFile, FittedSpatialModel)>> {
    let mut out = Vec::new();
    for path in list_files(&cfg.out(SPATIAL_DIR))? {
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let file: SpatialModelFile =
            serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
        let model = FittedSpatialModel::from_file(&file).with_context(|| format!("loading {}", path.display()))?;
        out.push((file, model));
    }
    Ok(out)
}

/// Station indices in the order a spatial model expects them.
pub fn station_order(ctx: &StationContext, file: &SpatialModelFile) -> Result<Vec<usize>> {
    file.station_ids
        .iter()
        .map(|id| ctx.index_of(id).ok_or_else(|| anyhow!("spatial model {} uses unknown station {id}", file.month)))
        .collect()
}

pub fn predict(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ctx = StationContext::load(cfg)?;
    let targets = read_targets(&cfg.data.targets, cfg.projection.as_ref())?;
    let models = load_spatial_models(cfg)?;
    if models.is_empty() {
        bail!("no fitted spatial models; run fit-spatial first");
    }
    let shape = cfg.spatial.atlas_shape;
    let mut results: Vec<(usize, TimeStamp, PredictionResult)> = Vec::new();
    for (file, model) in &models {
        let h = file.target_height;
        let sites: Vec<usize> = (0..targets.len()).filter(|j| targets[*j].hub_height == h).collect();
        if sites.is_empty() {
            continue;
        }
        let pts = sites
            .iter()
            .map(|j| {
                let t = &targets[*j];
                let c = gwa_mean_sqrt_at_height(t.mean50, t.mean100, h, shape)?;
                Ok(PredictionTarget { location: t.location, gwa_mean_sqrt: c })
            })
            .collect::<Result<Vec<_>>>()?;
        let order = station_order(&ctx, file)?;
        let (times, rows) = ctx.rows(&file.month, h, &order)?;
        let preds = predict_series(model, &rows, &pts, cfg.spatial.interval_level)?;
        for (t, row) in times.iter().zip(preds) {
            for (k, r) in row.into_iter().enumerate() {
                results.push((sites[k], *t, r));
            }
        }
    }
    results.sort_by_key(|r| (r.0, r.1));
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|(j, t, r)| {
            vec![
                targets[*j].id.clone(),
                format_timestamp(*t),
                num(r.speed_mean),
                num(r.sqrt_mean),
                num(r.sqrt_var),
                num(r.lo),
                num(r.hi),
            ]
        })
        .collect();
    let path = cfg.out(PREDICTIONS);
    write_csv(&path, &["site_id", "timestamp", "speed_mean", "sqrt_mean", "sqrt_var", "lo", "hi"], &rows)?;
    Ok(vec![path])
}

/// Baseline hub-height speeds on the 10-minute grid: hourly two-level series
/// interpolated in time, then extrapolated with the exponent implied at each
/// step.
pub fn baseline_series(hourly: &[(TimeStamp, f64, f64)], hub_height: f64) -> BTreeMap<TimeStamp, f64> {
    let mut out = BTreeMap::new();
    let (Some(first), Some(last)) = (hourly.first(), hourly.last()) else { return out };
    let n_hours = ((last.0.epoch_minutes() - first.0.epoch_minutes()) / 60) as usize + 1;
    let mut w10 = vec![None; n_hours];
    let mut w100 = vec![None; n_hours];
    for (t, a, b) in hourly {
        let i = ((t.epoch_minutes() - first.0.epoch_minutes()) / 60) as usize;
        w10[i] = Some(*a);
        w100[i] = Some(*b);
    }
    let (w10, w100) = (hourly_to_ten_minute(&w10), hourly_to_ten_minute(&w100));
    for (k, (a, b)) in w10.iter().zip(&w100).enumerate() {
        if let (Some(a), Some(b)) = (a, b) {
            if let Some(v) = baseline_hub_speed(*a, *b, hub_height) {
                out.insert(first.0.offset_steps(k as i64), v);
            }
        }
    }
    out
}

#[derive(Default)]
struct Aligned {
    pred: Vec<Option<f64>>,
    baseline: Vec<Option<f64>>,
    obs_max: Vec<Option<f64>>,
    obs_avg: Vec<Option<f64>>,
    /// Square-root posterior mean and variance.
    posterior: Vec<(f64, f64)>,
}

impl Aligned {
    fn extend(&mut self, other: &Aligned) {
        self.pred.extend(&other.pred);
        self.baseline.extend(&other.baseline);
        self.obs_max.extend(&other.obs_max);
        self.obs_avg.extend(&other.obs_avg);
        self.posterior.extend(&other.posterior);
    }
}

pub fn evaluate(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let farm_file = farm_path(cfg).ok_or_else(|| anyhow!("no farm observations"))?;
    let targets = read_targets(&cfg.data.targets, cfg.projection.as_ref())?;
    let farm = read_farm_obs(farm_file)?;
    let baseline = match baseline_path(cfg) {
        Some(p) => Some(read_baseline(p)?),
        None => None,
    };
    let preds = read_predictions(&cfg.out(PREDICTIONS))?;

    let mut by_site: BTreeMap<String, Vec<(TimeStamp, f64, f64, f64)>> = BTreeMap::new();
    for p in &preds {
        by_site.entry(p.site_id.clone()).or_default().push((
            parse_timestamp(&p.timestamp)?,
            p.speed_mean,
            p.sqrt_mean,
            p.sqrt_var,
        ));
    }

    let mut scopes: Vec<(String, Aligned)> = Vec::new();
    let mut pooled = Aligned::default();
    for t in &targets {
        let Some(series) = by_site.get(&t.id) else {
            log::warn!("site {}: no predictions", t.id);
            continue;
        };
        let obs = farm.get(&t.id);
        let base = baseline.as_ref().and_then(|b| b.get(&t.id)).map(|b| baseline_series(b, t.hub_height));
        let mut a = Aligned::default();
        for (ts, speed, m, v) in series {
            let o = obs.and_then(|o| o.get(ts)).copied().unwrap_or((None, None));
            a.pred.push(Some(*speed));
            a.baseline.push(base.as_ref().and_then(|b| b.get(ts)).copied());
            a.obs_max.push(o.0);
            a.obs_avg.push(o.1);
            a.posterior.push((*m, *v));
        }
        pooled.extend(&a);
        scopes.push((t.id.clone(), a));
    }
    scopes.push(("all".into(), pooled));

    let mut metrics = Vec::new();
    let mut coverage = Vec::new();
    for (site, a) in &scopes {
        let scope = if site == "all" { "pooled" } else { "site" };
        for (reference, obs) in [("max", &a.obs_max), ("avg", &a.obs_avg)] {
            let mut runs: Vec<(&str, f64, Vec<Option<f64>>)> = vec![("gp", 0.0, a.pred.clone())];
            for loss in &cfg.evaluate.wake_losses {
                runs.push(("gp", *loss, wake_adjust(&a.pred, *loss)?));
            }
            if baseline.is_some() {
                runs.push(("baseline", 0.0, a.baseline.clone()));
            }
            for (model, loss, pred) in runs {
                match compute_metrics(&pred, obs) {
                    Ok(r) => metrics.push(vec![
                        scope.into(),
                        site.clone(),
                        reference.into(),
                        model.into(),
                        num(loss),
                        r.n.to_string(),
                        num(r.rmse),
                        num(r.mean_bias),
                        num(r.pearson),
                    ]),
                    Err(e) => log::warn!("metrics for {site}/{reference}/{model}: {e}"),
                }
            }
        }
        for level in &cfg.evaluate.coverage_levels {
            let z = hubwind::special::two_sided_z(*level);
            let iv: Vec<Option<(f64, f64)>> = a
                .posterior
                .iter()
                .map(|(m, v)| {
                    let r = PredictionResult::from_posterior(*m, *v, z);
                    Some((r.lo, r.hi))
                })
                .collect();
            match empirical_coverage(*level, &iv, &a.obs_max) {
                Ok(r) => coverage.push(vec![scope.into(), site.clone(), num(*level), r.n.to_string(), num(r.coverage)]),
                Err(e) => log::warn!("coverage for {site} at {level}: {e}"),
            }
        }
    }
    let mpath = cfg.out(METRICS);
    write_csv(
        &mpath,
        &["scope", "site_id", "reference", "model", "wake_loss", "n", "rmse", "mean_bias", "pearson"],
        &metrics,
    )?;
    let cpath = cfg.out(COVERAGE);
    write_csv(&cpath, &["scope", "site_id", "level", "n", "coverage"], &coverage)?;
    Ok(vec![mpath, cpath])
}

//! Pipeline configuration, read from a TOML file. Every field has a default,
//! so an empty file is a valid configuration. Relative paths resolve against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hubwind::domain::Projection;
use hubwind::optim::BfgsOptions;
use hubwind::shear::AdditiveConfig;
use hubwind::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub stations: PathBuf,
    pub winds_10m: PathBuf,
    pub reanalysis: PathBuf,
    pub targets: PathBuf,
    /// Observed farm speeds; evaluation is skipped without it.
    pub farm_obs: Option<PathBuf>,
    /// Hourly two-level series at the targets for the power-law baseline.
    pub baseline: Option<PathBuf>,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            stations: "data/stations.csv".into(),
            winds_10m: "data/winds_10m.csv".into(),
            reanalysis: "data/reanalysis.csv".into(),
            targets: "data/targets.csv".into(),
            farm_obs: Some("data/farm_obs.csv".into()),
            baseline: Some("data/baseline.csv".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShearSettings {
    pub additive: AdditiveConfig,
    /// Harmonic pairs in the diurnal exponent model.
    pub harmonics: usize,
    pub constant_alpha: f64,
    /// Trailing share of each station's record held out for the model report.
    pub holdout_fraction: f64,
}

impl Default for ShearSettings {
    fn default() -> Self {
        Self { additive: AdditiveConfig::default(), harmonics: 2, constant_alpha: 1.0 / 7.0, holdout_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialSettings {
    /// Weibull shape used to turn atlas means into square-root means.
    pub atlas_shape: f64,
    /// Interval level written to predictions.csv.
    pub interval_level: f64,
    pub optimizer: BfgsOptions,
}

impl Default for SpatialSettings {
    fn default() -> Self {
        Self { atlas_shape: 2.0, interval_level: 0.95, optimizer: BfgsOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub coverage_levels: Vec<f64>,
    pub wake_losses: Vec<f64>,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self { coverage_levels: vec![0.80, 0.95], wake_losses: vec![0.10, 0.15, 0.20] }
    }
}

/// Lattice for `export-grid`. Without `timestamp` the export averages the
/// posterior over every time step of the month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub month: String,
    pub hub_height: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub spacing_km: f64,
    pub timestamp: Option<String>,
}

impl GridSpec {
    /// Node coordinates, x varying fastest.
    pub fn nodes(&self) -> Result<Vec<(f64, f64)>> {
        if !(self.spacing_km > 0.0) || !(self.x_max >= self.x_min) || !(self.y_max >= self.y_min) {
            bail!("empty lattice: need spacing_km > 0, x_max >= x_min and y_max >= y_min");
        }
        let count = |lo: f64, hi: f64| ((hi - lo) / self.spacing_km + 1e-9).floor() as usize + 1;
        let (nx, ny) = (count(self.x_min, self.x_max), count(self.y_min, self.y_max));
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push((self.x_min + i as f64 * self.spacing_km, self.y_min + j as f64 * self.spacing_km));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataPaths,
    pub output_dir: PathBuf,
    /// Needed when station or target tables give lon/lat.
    pub projection: Option<Projection>,
    /// `YYYY-MM` months to process; empty means every month in the data.
    pub months: Vec<String>,
    /// Worker threads; 0 lets the runtime choose.
    pub threads: usize,
    /// Single-threaded, ordered execution.
    pub deterministic: bool,
    pub shear: ShearSettings,
    pub spatial: SpatialSettings,
    pub evaluate: EvaluateSettings,
    /// World used by `simulate`; its seed is the run seed.
    pub synthetic: SynthConfig,
    pub grid: Option<GridSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            output_dir: "out".into(),
            projection: None,
            months: Vec::new(),
            threads: 0,
            deterministic: false,
            shear: ShearSettings::default(),
            spatial: SpatialSettings::default(),
            evaluate: EvaluateSettings::default(),
            synthetic: SynthConfig::default(),
            grid: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative paths absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.stations);
        fix(&mut self.data.winds_10m);
        fix(&mut self.data.reanalysis);
        fix(&mut self.data.targets);
        if let Some(p) = self.data.farm_obs.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.baseline.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.shear.additive.validate()?;
        if !(0.0..1.0).contains(&self.shear.holdout_fraction) {
            bail!("shear.holdout_fraction must lie in [0, 1)");
        }
        if !(self.shear.constant_alpha.is_finite()) {
            bail!("shear.constant_alpha must be finite");
        }
        if !(self.spatial.atlas_shape > 0.0) {
            bail!("spatial.atlas_shape must be positive");
        }
        let level_ok = |l: &f64| *l > 0.0 && *l < 1.0;
        if !level_ok(&self.spatial.interval_level) || !self.evaluate.coverage_levels.iter().all(level_ok) {
            bail!("interval levels must lie in (0, 1)");
        }
        if !self.evaluate.wake_losses.iter().all(|l| (0.0..1.0).contains(l)) {
            bail!("wake losses must lie in [0, 1)");
        }
        for m in &self.months {
            if chrono::NaiveDate::parse_from_str(&format!("{m}-01"), "%Y-%m-%d").is_err() || m.len() != 7 {
                bail!("month {m:?} is not YYYY-MM");
            }
        }
        self.synthetic.validate()?;
        Ok(())
    }

    /// Output locations, all under `output_dir`.
    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

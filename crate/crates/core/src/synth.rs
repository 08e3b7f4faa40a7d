//! Synthetic worlds with known truth, standing in for station, reanalysis,
//! atlas and wind-farm data.
//!
//! The latent square-root wind at 100 m is `Z(s, t) = beta0 + beta1 c(s) +
//! f(s, t) + e(s, t)`, with `f` a Matérn field and `e` a nugget, both AR(1)
//! in time with unit-variance innovations scaled to keep the marginal fixed.
//! At height `h` the square-root wind is `(h / 100)^gamma Z`.
//!
//! Station 10 m winds invert a shear law that is nonlinear in the 10 m speed
//! and depends on hour and direction. Reanalysis profiles add a shared
//! per-time error and a multiplicative bias that quantile mapping removes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distrib::{gwa_mean_sqrt_at_height, WeibullParams, PROFILE_HEIGHTS};
use crate::domain::{GeoLocation, TimeStamp};
use crate::error::{Error, Result};
use crate::eval::STEPS_PER_HOUR;
use crate::shear::HEIGHT_RANGE;
use crate::spatial::{cholesky_with_jitter, matern_nu1, SpatialHyperparams};

/// Weibull shape assumed when converting atlas means to square-root means.
pub const ATLAS_SHAPE: f64 = 2.0;

/// 2023-01-01T00:00Z in minutes since the Unix epoch.
pub const DEFAULT_START: i64 = 27_875_520;

/// True shear: `W_100 = W_10 10^alpha`, with
/// `alpha = a0 + a1 sin(2 pi t / 24) + a2 cos(2 pi t / 24) + b exp(-W_10 / c) + d cos(theta - theta0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShearTruth {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub theta0_deg: f64,
    /// Exponent of the height factor on the square-root scale.
    pub gamma: f64,
}

impl Default for ShearTruth {
    fn default() -> Self {
        Self { a0: 0.12, a1: 0.05, a2: 0.04, b: 0.25, c: 3.0, d: 0.06, theta0_deg: 225.0, gamma: 0.07 }
    }
}

impl ShearTruth {
    pub fn alpha(&self, w10: f64, hour: f64, direction: f64) -> f64 {
        let ph = 2.0 * std::f64::consts::PI * hour / 24.0;
        self.a0
            + self.a1 * ph.sin()
            + self.a2 * ph.cos()
            + self.b * (-w10 / self.c).exp()
            + self.d * (direction - self.theta0_deg).to_radians().cos()
    }

    /// Square-root speed at 100 m given the 10 m speed.
    pub fn sqrt_speed_100(&self, w10: f64, hour: f64, direction: f64) -> f64 {
        (w10 * 10f64.powf(self.alpha(w10, hour, direction))).sqrt()
    }

    pub fn height_factor(&self, h: f64) -> f64 {
        (h / 100.0).powf(self.gamma)
    }

    /// The 10 m speed whose 100 m square-root speed is `y`; zero for `y <= 0`.
    pub fn invert(&self, y: f64, hour: f64, direction: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.sqrt_speed_100(hi, hour, direction) < y {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.sqrt_speed_100(mid, hour, direction) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn validate(&self) -> Result<()> {
        let vals = [self.a0, self.a1, self.a2, self.b, self.c, self.d, self.theta0_deg, self.gamma];
        if !vals.iter().all(|v| v.is_finite()) || !(self.c > 0.0) {
            return Err(Error::invalid("shear truth parameters must be finite with c > 0"));
        }
        // keeps the 10 m to 100 m map strictly increasing
        if self.b * std::f64::consts::LN_10 >= std::f64::consts::E || self.b < 0.0 {
            return Err(Error::invalid("shear truth needs 0 <= b ln 10 < e for invertibility"));
        }
        Ok(())
    }
}

fn default_theta() -> SpatialHyperparams {
    SpatialHyperparams { kappa: 0.012, sigma_f: 0.6, sigma_eps: 0.08, beta0: 0.3, beta1: 0.9 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_stations: usize,
    /// One target per entry.
    pub target_heights: Vec<f64>,
    pub extent_km: f64,
    pub n_steps: usize,
    pub start_epoch_minutes: i64,
    /// Truth at 100 m on the square-root scale.
    pub theta: SpatialHyperparams,
    pub shear: ShearTruth,
    /// AR(1) coefficient per 10-minute step of the latent field.
    pub temporal_rho: f64,
    /// Square-root-scale SD of station 10 m observation error.
    pub station_noise: f64,
    /// Square-root-scale SD of the reanalysis error, shared across heights.
    pub reanalysis_noise: f64,
    /// Multiplicative bias of reanalysis speeds at 50-100 m.
    pub reanalysis_bias: f64,
    pub missing_fraction: f64,
    pub direction_step_deg: f64,
    pub direction_site_sd_deg: f64,
    /// Atlas 100 m mean at the origin and its change across the domain.
    pub gwa_mean100: f64,
    pub gwa_gradient_x: f64,
    pub gwa_gradient_y: f64,
    /// Farm-average speeds are `(1 - farm_wake)` times the free-stream truth.
    pub farm_wake: f64,
    pub farm_noise: f64,
    pub baseline_bias: f64,
    pub baseline_noise: f64,
    pub station_locations: Option<Vec<[f64; 2]>>,
    pub target_locations: Option<Vec<[f64; 2]>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_stations: 12,
            target_heights: vec![60.0, 80.0, 80.0, 100.0],
            extent_km: 400.0,
            n_steps: 4464,
            start_epoch_minutes: DEFAULT_START,
            theta: default_theta(),
            shear: ShearTruth::default(),
            temporal_rho: 0.9,
            station_noise: 0.08,
            reanalysis_noise: 0.08,
            reanalysis_bias: 0.93,
            missing_fraction: 0.005,
            direction_step_deg: 5.0,
            direction_site_sd_deg: 10.0,
            gwa_mean100: 7.0,
            gwa_gradient_x: 1.2,
            gwa_gradient_y: -0.8,
            farm_wake: 0.12,
            farm_noise: 0.03,
            baseline_bias: 1.08,
            baseline_noise: 0.25,
            station_locations: None,
            target_locations: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        self.shear.validate()?;
        if self.n_stations < 3 {
            return Err(Error::InsufficientData { needed: 3, got: self.n_stations });
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be positive"));
        }
        if self.start_epoch_minutes % 60 != 0 {
            return Err(Error::invalid("start_epoch_minutes must fall on the hour"));
        }
        if let Some(h) = self.target_heights.iter().find(|h| !(HEIGHT_RANGE.0..=HEIGHT_RANGE.1).contains(*h)) {
            return Err(Error::domain(format!("target hub height {h} m outside [50, 100]")));
        }
        if !(0.0..1.0).contains(&self.temporal_rho) || !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::invalid("temporal_rho and missing_fraction must lie in [0, 1)"));
        }
        let non_neg = [
            self.station_noise,
            self.reanalysis_noise,
            self.direction_step_deg,
            self.direction_site_sd_deg,
            self.farm_noise,
            self.baseline_noise,
        ];
        if non_neg.iter().any(|v| !(*v >= 0.0)) || !(self.extent_km > 0.0) {
            return Err(Error::invalid("noise levels must be non-negative and the extent positive"));
        }
        if !(self.reanalysis_bias > 0.0) || !(self.baseline_bias > 0.0) || !(0.0..1.0).contains(&self.farm_wake) {
            return Err(Error::invalid("biases must be positive and farm_wake in [0, 1)"));
        }
        if let Some(l) = &self.station_locations {
            if l.len() != self.n_stations {
                return Err(Error::invalid("station_locations length must equal n_stations"));
            }
        }
        if let Some(l) = &self.target_locations {
            if l.len() != self.target_heights.len() {
                return Err(Error::invalid("target_locations length must equal target_heights length"));
            }
        }
        Ok(())
    }

    fn gwa_mean100_at(&self, loc: &GeoLocation) -> f64 {
        self.gwa_mean100 + self.gwa_gradient_x * loc.x / self.extent_km + self.gwa_gradient_y * loc.y / self.extent_km
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSite {
    pub id: String,
    pub location: GeoLocation,
    pub mean50: f64,
    pub mean100: f64,
}

impl SynthSite {
    /// Square-root-scale mean covariate at height `h`.
    pub fn covariate(&self, h: f64) -> Result<f64> {
        gwa_mean_sqrt_at_height(self.mean50, self.mean100, h, ATLAS_SHAPE)
    }
}

/// A generated world. Per-site series are indexed `[site][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: SynthConfig,
    pub stations: Vec<SynthSite>,
    /// Station climatology at 50, 75 and 100 m.
    pub station_weibull: Vec<[WeibullParams; 3]>,
    pub targets: Vec<SynthSite>,
    pub times: Vec<TimeStamp>,
    /// Latent square-root 100 m wind, stations first and then targets.
    pub latent: Vec<Vec<f64>>,
    /// Observed 10 m speeds; `None` where the record is missing.
    pub station_w10: Vec<Vec<Option<f64>>>,
    pub station_direction: Vec<Vec<f64>>,
    /// `(w10, w50, w75, w100)` per station and time.
    pub reanalysis: Vec<Vec<[f64; 4]>>,
    /// Free-stream hub-height speed at each target.
    pub target_truth: Vec<Vec<f64>>,
    pub farm_avg: Vec<Vec<f64>>,
    /// Hourly `(w10, w100)` baseline at each target, at `times[6 i]`.
    pub baseline: Vec<Vec<[f64; 2]>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn wrap_deg(d: f64) -> f64 {
    let r = d.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn layout(given: &Option<Vec<[f64; 2]>>, n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Result<Vec<GeoLocation>> {
    match given {
        Some(v) => v.iter().map(|p| GeoLocation::new(p[0], p[1])).collect(),
        None => (0..n).map(|_| GeoLocation::new(rng.random_range(lo..hi), rng.random_range(lo..hi))).collect(),
    }
}

/// Lower Cholesky factor of the Matérn covariance over distinct locations,
/// plus the map from each site to its distinct location.
fn field_factor(locs: &[GeoLocation], theta: &SpatialHyperparams) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let mut uniq: Vec<GeoLocation> = Vec::new();
    let map = locs
        .iter()
        .map(|l| match uniq.iter().position(|u| u == l) {
            Some(i) => i,
            None => {
                uniq.push(*l);
                uniq.len() - 1
            }
        })
        .collect();
    let n = uniq.len();
    let c = DMatrix::from_fn(n, n, |i, j| matern_nu1(uniq[i].distance_to(&uniq[j]), theta.kappa, theta.sigma_f));
    let chol = cholesky_with_jitter(&c).map_err(|e| Error::invalid(format!("truth covariance: {e}")))?;
    Ok((chol.l(), map))
}

impl SyntheticWorld {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let th = cfg.theta;
        let shear = cfg.shear;
        let seed = cfg.seed;
        let n_s = cfg.n_stations;
        let n_g = cfg.target_heights.len();
        let n_t = cfg.n_steps;

        let mut rng_layout = rng_stream(seed, 1);
        let st_locs = layout(&cfg.station_locations, n_s, 0.0, cfg.extent_km, &mut rng_layout)?;
        let tg_locs = layout(&cfg.target_locations, n_g, 0.1 * cfg.extent_km, 0.9 * cfg.extent_km, &mut rng_layout)?;
        let height_ratio = 0.5f64.powf(2.0 * shear.gamma);
        let site = |prefix: &str, i: usize, loc: GeoLocation| {
            let mean100 = cfg.gwa_mean100_at(&loc);
            SynthSite { id: format!("{prefix}{:02}", i + 1), location: loc, mean50: mean100 * height_ratio, mean100 }
        };
        let stations: Vec<SynthSite> = st_locs.iter().enumerate().map(|(i, l)| site("ST", i, *l)).collect();
        let targets: Vec<SynthSite> = tg_locs.iter().enumerate().map(|(i, l)| site("WF", i, *l)).collect();
        if stations.iter().chain(&targets).any(|s| !(s.mean50 > 0.0)) {
            return Err(Error::invalid("atlas mean surface must stay positive over the domain"));
        }

        let all: Vec<&SynthSite> = stations.iter().chain(&targets).collect();
        let n_all = all.len();
        let mu: Vec<f64> = all.iter().map(|s| s.covariate(100.0).map(|c| th.mean(c))).collect::<Result<_>>()?;
        let locs: Vec<GeoLocation> = all.iter().map(|s| s.location).collect();
        let (l, map) = field_factor(&locs, &th)?;

        // latent field, AR(1) in time with a stationary start
        let mut rng_field = rng_stream(seed, 2);
        let rho = cfg.temporal_rho;
        let innov = (1.0 - rho * rho).sqrt();
        let n_u = l.nrows();
        let mut f = &l * DVector::from_fn(n_u, |_, _| normal(&mut rng_field));
        let mut e: Vec<f64> = (0..n_all).map(|_| th.sigma_eps * normal(&mut rng_field)).collect();
        let mut latent = vec![Vec::with_capacity(n_t); n_all];
        for t in 0..n_t {
            if t > 0 {
                let step = &l * DVector::from_fn(n_u, |_, _| normal(&mut rng_field));
                f = rho * f + innov * step;
                for ei in e.iter_mut() {
                    *ei = rho * *ei + innov * th.sigma_eps * normal(&mut rng_field);
                }
            }
            for i in 0..n_all {
                latent[i].push(mu[i] + f[map[i]] + e[i]);
            }
        }

        let times: Vec<TimeStamp> =
            (0..n_t).map(|t| TimeStamp::new(cfg.start_epoch_minutes + 10 * t as i64)).collect::<Result<_>>()?;

        // directions: a synoptic random walk plus site scatter
        let mut rng_dir = rng_stream(seed, 3);
        let mut synoptic = rng_dir.random_range(0.0..360.0);
        let mut station_direction = vec![Vec::with_capacity(n_t); n_s];
        for _ in 0..n_t {
            synoptic = wrap_deg(synoptic + cfg.direction_step_deg * normal(&mut rng_dir));
            for dirs in station_direction.iter_mut() {
                dirs.push(wrap_deg(synoptic + cfg.direction_site_sd_deg * normal(&mut rng_dir)));
            }
        }

        let mut rng_obs = rng_stream(seed, 4);
        let mut rng_miss = rng_stream(seed, 5);
        let factors: Vec<f64> = PROFILE_HEIGHTS.iter().map(|h| shear.height_factor(*h)).collect();
        let mut station_w10 = vec![Vec::with_capacity(n_t); n_s];
        let mut reanalysis = vec![Vec::with_capacity(n_t); n_s];
        for s in 0..n_s {
            for t in 0..n_t {
                let hour = times[t].hour_of_day();
                let dir = station_direction[s][t];
                let y = latent[s][t] + cfg.station_noise * normal(&mut rng_obs);
                let w10 = shear.invert(y, hour, dir);
                let m = shear.sqrt_speed_100(w10, hour, dir);
                let eta = cfg.reanalysis_noise * normal(&mut rng_obs);
                let mut row = [w10, 0.0, 0.0, 0.0];
                for (k, r) in factors.iter().enumerate() {
                    row[k + 1] = cfg.reanalysis_bias * (r * (m + eta)).max(0.0).powi(2);
                }
                reanalysis[s].push(row);
                let missing = rng_miss.random::<f64>() < cfg.missing_fraction;
                station_w10[s].push(if missing { None } else { Some(w10) });
            }
        }

        // station climatology: Gaussian square-root marginal matched by the
        // Weibull of twice the shape
        let marginal_var = th.target_prior_variance() + cfg.station_noise.powi(2) + cfg.reanalysis_noise.powi(2);
        let station_weibull = (0..n_s)
            .map(|s| {
                let mut out = [WeibullParams::new(2.0, 1.0)?; 3];
                for (k, r) in factors.iter().enumerate() {
                    let root = WeibullParams::from_moments(r * mu[s], r * r * marginal_var)?;
                    out[k] = WeibullParams::new(root.k / 2.0, root.lambda * root.lambda)?;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut rng_farm = rng_stream(seed, 6);
        let mut target_truth = Vec::with_capacity(n_g);
        let mut farm_avg = Vec::with_capacity(n_g);
        for (j, h) in cfg.target_heights.iter().enumerate() {
            let r = shear.height_factor(*h);
            let truth: Vec<f64> = latent[n_s + j].iter().map(|z| (r * z).max(0.0).powi(2)).collect();
            let avg = truth
                .iter()
                .map(|w| (w * (1.0 - cfg.farm_wake) * (1.0 + cfg.farm_noise * normal(&mut rng_farm))).max(0.0))
                .collect();
            target_truth.push(truth);
            farm_avg.push(avg);
        }

        let mut rng_base = rng_stream(seed, 7);
        let baseline = (0..n_g)
            .map(|j| {
                (0..n_t)
                    .step_by(STEPS_PER_HOUR)
                    .map(|t| {
                        let z = latent[n_s + j][t] + cfg.baseline_noise * normal(&mut rng_base);
                        let dir = rng_base.random_range(0.0..360.0);
                        let w10 = shear.invert(z, times[t].hour_of_day(), dir);
                        let w100 = z.max(0.0).powi(2);
                        [cfg.baseline_bias * w10, cfg.baseline_bias * w100]
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            config: cfg,
            stations,
            station_weibull,
            targets,
            times,
            latent,
            station_w10,
            station_direction,
            reanalysis,
            target_truth,
            farm_avg,
            baseline,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    /// Latent square-root series scaled to height `h` for station `s`.
    pub fn station_sqrt_at(&self, s: usize, h: f64) -> Vec<f64> {
        let r = self.config.shear.height_factor(h);
        self.latent[s].iter().map(|z| r * z).collect()
    }
}

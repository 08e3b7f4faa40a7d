//! Replicated Gaussian-process model on the square-root scale.
//!
//! Each 10-minute time step of a month is an independent realisation of
//! `sqrt(W) ~ MVN(mu, C)` with `mu_i = b0 + b1 * m_i` (atlas mean covariate)
//! and `C = Sigma_f + Sigma_GAM + sigma_eps^2 I`, where `Sigma_f` is a
//! Matérn ν = 1 covariance and `Sigma_GAM` holds the per-station residual
//! variances of the height extrapolation.

mod fit;
mod krige;

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

pub use fit::{fit_hyperparams, initial_hyperparams, FittedSpatialModel, SpatialModelFile, SPATIAL_FORMAT};
pub use krige::{krige_predict, predict_series, KrigingWeights, PredictionResult, PredictionTarget};

use crate::domain::{euclidean_distance, GeoLocation};
use crate::error::{Error, Result};
use crate::special::scaled_k1;

/// Maximum jitter retries when a covariance fails to factorise.
const JITTER_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialHyperparams {
    /// Inverse range in 1/km.
    pub kappa: f64,
    pub sigma_f: f64,
    /// Nugget SD.
    pub sigma_eps: f64,
    pub beta0: f64,
    pub beta1: f64,
}

impl SpatialHyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kappa > 0.0
            && self.sigma_f > 0.0
            && self.sigma_eps >= 0.0
            && [self.kappa, self.sigma_f, self.sigma_eps, self.beta0, self.beta1].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::invalid(format!("invalid spatial hyperparameters {self:?}")));
        }
        Ok(())
    }

    /// Optimiser coordinates: logs of the scale parameters, raw betas.
    pub(crate) fn to_unconstrained(self) -> [f64; 5] {
        [self.kappa.ln(), self.sigma_f.ln(), self.sigma_eps.max(1e-12).ln(), self.beta0, self.beta1]
    }

    pub(crate) fn from_unconstrained(x: &[f64]) -> Self {
        Self { kappa: x[0].exp(), sigma_f: x[1].exp(), sigma_eps: x[2].exp(), beta0: x[3], beta1: x[4] }
    }

    pub fn mean(&self, covariate: f64) -> f64 {
        self.beta0 + self.beta1 * covariate
    }

    /// Prior variance of the latent field plus nugget at an unmonitored site.
    pub fn target_prior_variance(&self) -> f64 {
        self.sigma_f * self.sigma_f + self.sigma_eps * self.sigma_eps
    }
}

/// Matérn covariance with smoothness one: `sigma_f^2 (kappa d) K1(kappa d)`.
pub fn matern_nu1(d: f64, kappa: f64, sigma_f: f64) -> f64 {
    sigma_f * sigma_f * scaled_k1(kappa * d)
}

/// Stations at hub height for one calendar month, with replicates that have
/// any missing station removed.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyDataset {
    pub stations: Vec<GeoLocation>,
    /// `n_s x n_t`; one column per retained time step.
    pub sqrt_speeds: DMatrix<f64>,
    pub gam_variances: Vec<f64>,
    pub gwa_mean_sqrt: Vec<f64>,
    pub target_height: f64,
    /// Rows removed for missing stations.
    pub dropped_rows: usize,
}

impl MonthlyDataset {
    pub fn new(
        stations: Vec<GeoLocation>,
        rows: &[Vec<Option<f64>>],
        gam_variances: Vec<f64>,
        gwa_mean_sqrt: Vec<f64>,
        target_height: f64,
    ) -> Result<Self> {
        let n_s = stations.len();
        if n_s < 3 {
            return Err(Error::InsufficientData { needed: 3, got: n_s });
        }
        if gam_variances.len() != n_s || gwa_mean_sqrt.len() != n_s {
            return Err(Error::invalid("per-station vectors must match the station count"));
        }
        if gam_variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("observation variances must be non-negative"));
        }
        let mut cols: Vec<f64> = Vec::with_capacity(rows.len() * n_s);
        let mut dropped = 0;
        for row in rows {
            if row.len() != n_s {
                return Err(Error::invalid(format!("row has {} entries, expected {n_s}", row.len())));
            }
            if row.iter().all(|v| v.is_some_and(f64::is_finite)) {
                cols.extend(row.iter().map(|v| v.unwrap()));
            } else {
                dropped += 1;
            }
        }
        let n_t = cols.len() / n_s;
        if n_t == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(Self {
            stations,
            sqrt_speeds: DMatrix::from_column_slice(n_s, n_t, &cols),
            gam_variances,
            gwa_mean_sqrt,
            target_height,
            dropped_rows: dropped,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_times(&self) -> usize {
        self.sqrt_speeds.ncols()
    }
}

/// `C_ij = matern(d_ij) + [i == j] (sigma_s_i^2 + sigma_eps^2)`.
pub fn build_covariance(stations: &[GeoLocation], theta: &SpatialHyperparams, gam_variances: &[f64]) -> DMatrix<f64> {
    let n = stations.len();
    let nugget = theta.sigma_eps * theta.sigma_eps;
    DMatrix::from_fn(n, n, |i, j| {
        let d = euclidean_distance(&stations[i], &stations[j]);
        let c = matern_nu1(d, theta.kappa, theta.sigma_f);
        if i == j {
            c + gam_variances[i] + nugget
        } else {
            c
        }
    })
}

/// Cross-covariance between stations (rows) and targets (columns).
pub fn cross_covariance(stations: &[GeoLocation], targets: &[GeoLocation], theta: &SpatialHyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(stations.len(), targets.len(), |i, j| {
        matern_nu1(euclidean_distance(&stations[i], &targets[j]), theta.kappa, theta.sigma_f)
    })
}

/// Cholesky factorisation, retrying with diagonal jitter of
/// `1e-8 * mean(diag)` escalating tenfold.
pub fn cholesky_with_jitter(c: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(c.clone()) {
        return Ok(ch);
    }
    let n = c.nrows();
    let mean_diag = c.diagonal().sum() / n.max(1) as f64;
    let mut jitter = 1e-8 * mean_diag;
    for _ in 0..JITTER_ATTEMPTS {
        let mut cj = c.clone();
        for i in 0..n {
            cj[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(cj) {
            log::debug!("covariance factorised with jitter {jitter:e}");
            return Ok(ch);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { attempts: JITTER_ATTEMPTS })
}

/// Mean vector `b0 + b1 * m_i` at the stations.
pub fn mean_vector(theta: &SpatialHyperparams, covariate: &[f64]) -> Vec<f64> {
    covariate.iter().map(|m| theta.mean(*m)).collect()
}

/// Gaussian log-likelihood summed over replicates, including the
/// `-n/2 ln(2 pi)` constant. Returns `-inf` when `C` cannot be factorised.
pub fn log_likelihood(data: &MonthlyDataset, theta: &SpatialHyperparams) -> f64 {
    if theta.validate().is_err() {
        return f64::NEG_INFINITY;
    }
    let c = build_covariance(&data.stations, theta, &data.gam_variances);
    let Ok(chol) = cholesky_with_jitter(&c) else {
        return f64::NEG_INFINITY;
    };
    let mu = mean_vector(theta, &data.gwa_mean_sqrt);
    let mut resid = data.sqrt_speeds.clone();
    for mut col in resid.column_iter_mut() {
        for (v, m) in col.iter_mut().zip(&mu) {
            *v -= m;
        }
    }
    let l = chol.l();
    let z = l.solve_lower_triangular(&resid).expect("Cholesky factor has a positive diagonal");
    let quad = z.norm_squared();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let n_t = data.n_times() as f64;
    let n_s = data.n_stations() as f64;
    -0.5 * (quad + n_t * log_det + n_t * n_s * (2.0 * std::f64::consts::PI).ln())
}

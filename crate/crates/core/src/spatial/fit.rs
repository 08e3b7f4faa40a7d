use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use super::{build_covariance, cholesky_with_jitter, log_likelihood, mean_vector, MonthlyDataset, SpatialHyperparams};
use crate::domain::{euclidean_distance, GeoLocation};
use crate::error::{Error, Result};
use crate::optim::{minimize, BfgsOptions, ConvergenceStatus};

pub const SPATIAL_FORMAT: &str = "hubwind-spatial-month/1";

/// Starting values: `kappa = 3 / median pairwise distance`, `sigma_f` from
/// the spread of station means, `sigma_eps = 0.1 sigma_f`, and betas from
/// ordinary least squares of station means on the atlas covariate.
pub fn initial_hyperparams(data: &MonthlyDataset) -> SpatialHyperparams {
    let n_s = data.n_stations();
    let mut dists = Vec::with_capacity(n_s * (n_s - 1) / 2);
    for i in 0..n_s {
        for j in i + 1..n_s {
            dists.push(euclidean_distance(&data.stations[i], &data.stations[j]));
        }
    }
    dists.sort_by(f64::total_cmp);
    let median = dists.get(dists.len() / 2).copied().unwrap_or(1.0).max(1e-3);

    let n_t = data.n_times() as f64;
    let means: Vec<f64> = data.sqrt_speeds.row_iter().map(|r| r.sum() / n_t).collect();
    let grand = means.iter().sum::<f64>() / n_s as f64;
    let spread = (means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_s - 1) as f64).sqrt();
    let sigma_f = if spread > 1e-3 {
        spread
    } else {
        // station means coincide; fall back to the pooled temporal SD
        let pooled: f64 = data
            .sqrt_speeds
            .row_iter()
            .zip(&means)
            .map(|(r, m)| r.iter().map(|v| (v - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (n_t * n_s as f64);
        pooled.sqrt().max(1e-2)
    };

    let xm = data.gwa_mean_sqrt.iter().sum::<f64>() / n_s as f64;
    let sxx: f64 = data.gwa_mean_sqrt.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = data.gwa_mean_sqrt.iter().zip(&means).map(|(x, y)| (x - xm) * (y - grand)).sum();
    let beta1 = if sxx > 1e-12 { sxy / sxx } else { 0.0 };
    SpatialHyperparams { kappa: 3.0 / median, sigma_f, sigma_eps: 0.1 * sigma_f, beta0: grand - beta1 * xm, beta1 }
}

/// A month's fitted model: hyperparameters, station set and the factorised
/// station covariance.
#[derive(Debug, Clone)]
pub struct FittedSpatialModel {
    pub theta: SpatialHyperparams,
    pub stations: Vec<GeoLocation>,
    pub gam_variances: Vec<f64>,
    pub gwa_mean_sqrt: Vec<f64>,
    pub mean_vector: Vec<f64>,
    pub target_height: f64,
    pub month: String,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub status: ConvergenceStatus,
    pub(crate) chol: Cholesky<f64, Dyn>,
}

impl FittedSpatialModel {
    /// Builds a model at fixed hyperparameters, without fitting.
    pub fn from_theta(
        theta: SpatialHyperparams,
        stations: Vec<GeoLocation>,
        gam_variances: Vec<f64>,
        gwa_mean_sqrt: Vec<f64>,
        target_height: f64,
    ) -> Result<Self> {
        theta.validate()?;
        if gam_variances.len() != stations.len() || gwa_mean_sqrt.len() != stations.len() {
            return Err(Error::invalid("per-station vectors must match the station count"));
        }
        let chol = cholesky_with_jitter(&build_covariance(&stations, &theta, &gam_variances))?;
        Ok(Self {
            mean_vector: mean_vector(&theta, &gwa_mean_sqrt),
            theta,
            stations,
            gam_variances,
            gwa_mean_sqrt,
            target_height,
            month: String::new(),
            log_likelihood: f64::NAN,
            iterations: 0,
            status: ConvergenceStatus::Converged,
            chol,
        })
    }

    pub fn covariance_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn to_file(&self, station_ids: &[String]) -> SpatialModelFile {
        SpatialModelFile {
            format: SPATIAL_FORMAT.to_string(),
            month: self.month.clone(),
            target_height: self.target_height,
            theta: self.theta,
            station_ids: station_ids.to_vec(),
            stations: self.stations.clone(),
            gam_variances: self.gam_variances.clone(),
            gwa_mean_sqrt: self.gwa_mean_sqrt.clone(),
            mean_vector: self.mean_vector.clone(),
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            status: self.status,
        }
    }

    pub fn from_file(file: &SpatialModelFile) -> Result<Self> {
        if file.format != SPATIAL_FORMAT {
            return Err(Error::Format(file.format.clone()));
        }
        let mut m = Self::from_theta(
            file.theta,
            file.stations.clone(),
            file.gam_variances.clone(),
            file.gwa_mean_sqrt.clone(),
            file.target_height,
        )?;
        m.month = file.month.clone();
        m.log_likelihood = file.log_likelihood;
        m.iterations = file.iterations;
        m.status = file.status;
        Ok(m)
    }
}

/// On-disk form of a fitted month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialModelFile {
    pub format: String,
    pub month: String,
    pub target_height: f64,
    pub theta: SpatialHyperparams,
    pub station_ids: Vec<String>,
    pub stations: Vec<GeoLocation>,
    pub gam_variances: Vec<f64>,
    pub gwa_mean_sqrt: Vec<f64>,
    pub mean_vector: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub status: ConvergenceStatus,
}

/// Maximum-likelihood fit by BFGS over `(ln kappa, ln sigma_f, ln sigma_eps, b0, b1)`.
pub fn fit_hyperparams(
    data: &MonthlyDataset,
    init: &SpatialHyperparams,
    opts: &BfgsOptions,
) -> Result<FittedSpatialModel> {
    init.validate()?;
    let mut start = *init;
    if start.sigma_eps <= 0.0 {
        start.sigma_eps = 1e-3 * start.sigma_f;
    }
    let x0 = start.to_unconstrained();
    let objective = |x: &[f64]| {
        let ll = log_likelihood(data, &SpatialHyperparams::from_unconstrained(x));
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let res = minimize(objective, &x0, opts);
    if !res.value.is_finite() {
        return Err(Error::NotPositiveDefinite { attempts: 0 });
    }
    if res.status != ConvergenceStatus::Converged {
        log::warn!("spatial fit ended with status {} after {} iterations", res.status.as_str(), res.iterations);
    }
    let theta = SpatialHyperparams::from_unconstrained(&res.x);
    let mut model = FittedSpatialModel::from_theta(
        theta,
        data.stations.clone(),
        data.gam_variances.clone(),
        data.gwa_mean_sqrt.clone(),
        data.target_height,
    )?;
    model.log_likelihood = -res.value;
    model.iterations = res.iterations;
    model.status = res.status;
    Ok(model)
}

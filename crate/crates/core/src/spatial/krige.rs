use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{build_covariance, cholesky_with_jitter, cross_covariance, FittedSpatialModel};
use crate::domain::GeoLocation;
use crate::error::{Error, Result};
use crate::special::two_sided_z;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionTarget {
    pub location: GeoLocation,
    /// Atlas mean square-root wind at the target's hub height.
    pub gwa_mean_sqrt: f64,
}

/// Posterior at one target and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub sqrt_mean: f64,
    pub sqrt_var: f64,
    /// `m^2 + v`, the mean of the squared Gaussian.
    pub speed_mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PredictionResult {
    /// Back-transforms a square-root-scale Gaussian posterior. Interval
    /// endpoints are squared sqrt-scale quantiles, clamped at zero.
    pub fn from_posterior(sqrt_mean: f64, sqrt_var: f64, z: f64) -> Self {
        let v = sqrt_var.max(0.0);
        let half = z * v.sqrt();
        let lo = (sqrt_mean - half).max(0.0).powi(2);
        let hi = (sqrt_mean + half).max(0.0).powi(2);
        Self { sqrt_mean, sqrt_var: v, speed_mean: sqrt_mean * sqrt_mean + v, lo, hi }
    }

    /// Recomputes the interval at a different level.
    pub fn interval_at(&self, level: f64) -> Result<(f64, f64)> {
        let r = Self::from_posterior(self.sqrt_mean, self.sqrt_var, z_for(level)?);
        Ok((r.lo, r.hi))
    }
}

fn z_for(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("interval level {level} outside (0, 1)")));
    }
    Ok(two_sided_z(level))
}

/// Kriging weights for one pattern of available stations.
#[derive(Debug, Clone)]
pub struct KrigingWeights {
    /// Indices of the stations used.
    pub present: Vec<usize>,
    /// `n_targets x n_present`: `C_TS C_SS^-1`.
    pub weights: DMatrix<f64>,
    pub target_means: Vec<f64>,
    pub posterior_var: Vec<f64>,
}

impl KrigingWeights {
    pub fn new(model: &FittedSpatialModel, targets: &[PredictionTarget], present: Vec<usize>) -> Result<Self> {
        let theta = &model.theta;
        let prior = theta.target_prior_variance();
        let target_means: Vec<f64> = targets.iter().map(|t| theta.mean(t.gwa_mean_sqrt)).collect();
        let n_t = targets.len();
        if present.is_empty() {
            return Ok(Self {
                present,
                weights: DMatrix::zeros(n_t, 0),
                target_means,
                posterior_var: vec![prior; n_t],
            });
        }
        let locs: Vec<GeoLocation> = present.iter().map(|i| model.stations[*i]).collect();
        let target_locs: Vec<GeoLocation> = targets.iter().map(|t| t.location).collect();
        let cross = cross_covariance(&locs, &target_locs, theta);
        let solved = if present.len() == model.stations.len() {
            model.chol.solve(&cross)
        } else {
            let gam: Vec<f64> = present.iter().map(|i| model.gam_variances[*i]).collect();
            cholesky_with_jitter(&build_covariance(&locs, theta, &gam))?.solve(&cross)
        };
        let posterior_var = (0..n_t).map(|j| (prior - cross.column(j).dot(&solved.column(j))).max(0.0)).collect();
        Ok(Self { present, weights: solved.transpose(), target_means, posterior_var })
    }

    /// Posterior for one row; `row` must have values at every station in
    /// `present`. `z` is the two-sided normal quantile of the interval.
    pub fn apply(&self, model: &FittedSpatialModel, row: &[Option<f64>], z: f64) -> Vec<PredictionResult> {
        let resid: Vec<f64> = self
            .present
            .iter()
            .map(|i| row[*i].expect("pattern guarantees presence") - model.mean_vector[*i])
            .collect();
        (0..self.target_means.len())
            .map(|j| {
                let w = self.weights.row(j);
                let m = self.target_means[j] + w.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>();
                PredictionResult::from_posterior(m, self.posterior_var[j], z)
            })
            .collect()
    }
}

fn pattern(row: &[Option<f64>]) -> Vec<usize> {
    row.iter().enumerate().filter(|(_, v)| v.is_some_and(f64::is_finite)).map(|(i, _)| i).collect()
}

/// Posterior at each target for one time step. Missing stations are
/// dropped from the conditioning set.
pub fn krige_predict(
    model: &FittedSpatialModel,
    row: &[Option<f64>],
    targets: &[PredictionTarget],
    level: f64,
) -> Result<Vec<PredictionResult>> {
    let z = z_for(level)?;
    if row.len() != model.stations.len() {
        return Err(Error::invalid(format!("row has {} stations, model has {}", row.len(), model.stations.len())));
    }
    Ok(KrigingWeights::new(model, targets, pattern(row))?.apply(model, row, z))
}

/// [`krige_predict`] over many rows, reusing weights per missingness pattern.
pub fn predict_series(
    model: &FittedSpatialModel,
    rows: &[Vec<Option<f64>>],
    targets: &[PredictionTarget],
    level: f64,
) -> Result<Vec<Vec<PredictionResult>>> {
    let z = z_for(level)?;
    let mut cache: HashMap<Vec<usize>, KrigingWeights> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != model.stations.len() {
            return Err(Error::invalid(format!("row has {} stations, model has {}", row.len(), model.stations.len())));
        }
        let key = pattern(row);
        if !cache.contains_key(&key) {
            let w = KrigingWeights::new(model, targets, key.clone())?;
            cache.insert(key.clone(), w);
        }
        out.push(cache[&key].apply(model, row, z));
    }
    Ok(out)
}

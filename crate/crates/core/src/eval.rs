//! Validation metrics, wake-loss scaling, interval coverage and the
//! reanalysis-style hourly baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shear::{implied_alpha, power_law_extrapolate};

/// Accuracy of a predicted series against observations. Bias is
/// predicted minus observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mean_bias: f64,
    /// NaN when either series is constant over the retained pairs.
    pub pearson: f64,
    pub n: usize,
}

fn pairs<'a>(pred: &'a [Option<f64>], obs: &'a [Option<f64>]) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.len() != obs.len() {
        return Err(Error::invalid(format!("series lengths differ: {} vs {}", pred.len(), obs.len())));
    }
    Ok(pred.iter().zip(obs).filter_map(|(p, o)| match (p, o) {
        (Some(p), Some(o)) if p.is_finite() && o.is_finite() => Some((*p, *o)),
        _ => None,
    }))
}

/// RMSE, mean bias and Pearson correlation over the pairs where both values
/// are present.
pub fn compute_metrics(pred: &[Option<f64>], obs: &[Option<f64>]) -> Result<MetricReport> {
    let kept: Vec<(f64, f64)> = pairs(pred, obs)?.collect();
    let n = kept.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let mse = kept.iter().map(|(p, o)| (p - o).powi(2)).sum::<f64>() / nf;
    let mean_bias = kept.iter().map(|(p, o)| p - o).sum::<f64>() / nf;
    let mp = kept.iter().map(|(p, _)| p).sum::<f64>() / nf;
    let mo = kept.iter().map(|(_, o)| o).sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, o) in &kept {
        sxy += (p - mp) * (o - mo);
        sxx += (p - mp).powi(2);
        syy += (o - mo).powi(2);
    }
    let pearson = if sxx > 0.0 && syy > 0.0 { (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0) } else { f64::NAN };
    Ok(MetricReport { rmse: mse.sqrt(), mean_bias, pearson, n })
}

/// Scales predictions by `1 - loss`.
pub fn wake_adjust(pred: &[Option<f64>], loss: f64) -> Result<Vec<Option<f64>>> {
    if !(0.0..1.0).contains(&loss) {
        return Err(Error::domain(format!("wake loss {loss} outside [0, 1)")));
    }
    Ok(pred.iter().map(|p| p.map(|v| v * (1.0 - loss))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub level: f64,
    pub coverage: f64,
    pub n: usize,
}

/// Fraction of observations with `lo <= obs <= hi`.
pub fn empirical_coverage(level: f64, intervals: &[Option<(f64, f64)>], obs: &[Option<f64>]) -> Result<CoverageReport> {
    if intervals.len() != obs.len() {
        return Err(Error::invalid(format!("series lengths differ: {} vs {}", intervals.len(), obs.len())));
    }
    let (mut n, mut inside) = (0usize, 0usize);
    for (iv, o) in intervals.iter().zip(obs) {
        if let (Some((lo, hi)), Some(o)) = (iv, o) {
            if !o.is_finite() {
                continue;
            }
            n += 1;
            if *lo <= *o && *o <= *hi {
                inside += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(CoverageReport { level, coverage: inside as f64 / n as f64, n })
}

/// Steps per hour on the 10-minute grid.
pub const STEPS_PER_HOUR: usize = 6;

/// Linear interpolation of an hourly series onto the 10-minute grid spanning
/// the first to the last hour. Output index `6 i` holds hour `i`. Steps
/// between two hours are missing unless both ends are present.
pub fn hourly_to_ten_minute(hourly: &[Option<f64>]) -> Vec<Option<f64>> {
    if hourly.is_empty() {
        return Vec::new();
    }
    let mut out = vec![None; STEPS_PER_HOUR * (hourly.len() - 1) + 1];
    for (i, v) in hourly.iter().enumerate() {
        out[STEPS_PER_HOUR * i] = *v;
    }
    for (i, w) in hourly.windows(2).enumerate() {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            for s in 1..STEPS_PER_HOUR {
                let f = s as f64 / STEPS_PER_HOUR as f64;
                out[STEPS_PER_HOUR * i + s] = Some(a + (b - a) * f);
            }
        }
    }
    out
}

/// Shear exponent between 10 m and 100 m; `None` for non-positive speeds.
pub fn site_alpha(w10: f64, w100: f64) -> Option<f64> {
    implied_alpha(w10, w100, 100.0)
}

/// Baseline hub-height speed from a two-level pair using the exponent
/// implied at that time point.
pub fn baseline_hub_speed(w10: f64, w100: f64, hub_height: f64) -> Option<f64> {
    site_alpha(w10, w100).map(|a| power_law_extrapolate(w10, hub_height, a))
}

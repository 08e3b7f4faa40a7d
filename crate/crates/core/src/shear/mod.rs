//! Vertical extrapolation of 10 m winds to hub height.
//!
//! Three models are provided: the constant-exponent power law, a power law
//! whose exponent follows diurnal harmonics, and a penalized additive model
//! on the square-root scale whose residual variance feeds the spatial stage
//! as station-specific observation noise.

mod additive;
pub mod bspline;
mod harmonic;

use serde::{Deserialize, Serialize};

pub use additive::{AdditiveConfig, AdditiveFitter, AdditiveShearModel, ADDITIVE_FORMAT};
pub use harmonic::HarmonicAlphaModel;

use crate::distrib::{densify_profile, VerticalProfile, PROFILE_HEIGHTS};
use crate::domain::direction_components;
use crate::error::{Error, Result};

/// Lowest and highest hub heights the models are trained for.
pub const HEIGHT_RANGE: (f64, f64) = (50.0, 100.0);

/// `W_h = W_10 (h / 10)^alpha`.
pub fn power_law_extrapolate(w10: f64, h: f64, alpha: f64) -> f64 {
    w10 * (h / 10.0).powf(alpha)
}

/// Exponent linking a 10 m speed and a speed at height `h`; `None` when
/// either speed is non-positive or `h` is 10 m.
pub fn implied_alpha(w10: f64, wh: f64, h: f64) -> Option<f64> {
    if !(w10 > 0.0) || !(wh > 0.0) || h == 10.0 || !(h > 0.0) {
        return None;
    }
    Some((wh / w10).ln() / (h / 10.0).ln())
}

/// One training observation: a time point at one (pseudo-)height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShearRow {
    pub sqrt_w10: f64,
    pub height: f64,
    pub hour: f64,
    pub u: f64,
    pub v: f64,
    pub sqrt_wh: f64,
}

impl ShearRow {
    pub fn w10(&self) -> f64 {
        self.sqrt_w10 * self.sqrt_w10
    }

    pub fn wh(&self) -> f64 {
        self.sqrt_wh * self.sqrt_wh
    }
}

/// Reanalysis-style record for one time point at one station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRecord {
    pub hour: f64,
    pub w10: f64,
    pub direction: f64,
    pub profile: VerticalProfile,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShearTrainingSet {
    rows: Vec<ShearRow>,
}

impl ShearTrainingSet {
    pub fn new(rows: Vec<ShearRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            let ok = r.sqrt_w10 >= 0.0
                && r.sqrt_wh >= 0.0
                && (HEIGHT_RANGE.0..=HEIGHT_RANGE.1).contains(&r.height)
                && [r.hour, r.u, r.v].iter().all(|v| v.is_finite());
            if !ok {
                return Err(Error::domain(format!("invalid training row {i}: {r:?}")));
            }
        }
        Ok(Self { rows })
    }

    /// Densified pseudo-observations at 5 m spacing between 50 and 100 m.
    pub fn from_profiles(records: &[ProfileRecord]) -> Result<Self> {
        let mut rows = Vec::with_capacity(records.len() * 11);
        for rec in records {
            let (u, v) = direction_components(rec.direction);
            let sqrt_w10 = rec.w10.max(0.0).sqrt();
            for (h, s) in densify_profile(&rec.profile) {
                rows.push(ShearRow { sqrt_w10, height: h, hour: rec.hour, u, v, sqrt_wh: s.sqrt() });
            }
        }
        Self::new(rows)
    }

    /// Rows at the three reanalysis levels only, without densification.
    pub fn from_levels(records: &[ProfileRecord]) -> Result<Self> {
        let mut rows = Vec::with_capacity(records.len() * 3);
        for rec in records {
            let (u, v) = direction_components(rec.direction);
            let sqrt_w10 = rec.w10.max(0.0).sqrt();
            for (h, s) in PROFILE_HEIGHTS.iter().zip(rec.profile.speeds) {
                rows.push(ShearRow { sqrt_w10, height: *h, hour: rec.hour, u, v, sqrt_wh: s.sqrt() });
            }
        }
        Self::new(rows)
    }

    pub fn rows(&self) -> &[ShearRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Power law with a fixed exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantAlphaModel {
    pub alpha: f64,
}

impl Default for ConstantAlphaModel {
    fn default() -> Self {
        Self { alpha: 1.0 / 7.0 }
    }
}

impl ConstantAlphaModel {
    pub fn predict(&self, w10: f64, h: f64) -> f64 {
        power_law_extrapolate(w10, h, self.alpha)
    }
}

/// Any of the three extrapolation models, for side-by-side evaluation.
#[derive(Debug, Clone)]
pub enum ShearModel {
    Constant(ConstantAlphaModel),
    Harmonic(HarmonicAlphaModel),
    Additive(Box<AdditiveShearModel>),
}

impl ShearModel {
    pub fn name(&self) -> &'static str {
        match self {
            ShearModel::Constant(_) => "constant_alpha",
            ShearModel::Harmonic(_) => "harmonic_alpha",
            ShearModel::Additive(_) => "additive",
        }
    }

    /// Point prediction of the hub-height speed in m/s.
    pub fn predict_speed(&self, w10: f64, h: f64, hour: f64, direction: f64) -> Result<f64> {
        match self {
            ShearModel::Constant(m) => Ok(m.predict(w10, h)),
            ShearModel::Harmonic(m) => Ok(m.predict(w10, h, hour)),
            ShearModel::Additive(m) => {
                let (mean, sd) = m.predict(w10, h, hour, direction)?;
                Ok(mean.max(0.0).powi(2) + sd * sd)
            }
        }
    }

    /// Root mean squared error in m/s over a set of rows.
    pub fn rmse(&self, set: &ShearTrainingSet) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let mut sse = 0.0;
        for r in set.rows() {
            let direction = (-r.u).atan2(-r.v).to_degrees().rem_euclid(360.0);
            let pred = self.predict_speed(r.w10(), r.height, r.hour, direction)?;
            sse += (pred - r.wh()).powi(2);
        }
        Ok((sse / set.len() as f64).sqrt())
    }
}

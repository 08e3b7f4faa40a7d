use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{implied_alpha, power_law_extrapolate, ShearTrainingSet};
use crate::error::{Error, Result};

/// Power law whose exponent follows `alpha0 + sum_i b_i sin(2 pi i t / 24) + b'_i cos(2 pi i t / 24)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicAlphaModel {
    pub alpha0: f64,
    pub beta_sin: Vec<f64>,
    pub beta_cos: Vec<f64>,
}

fn harmonic_row(hour: f64, p: usize, out: &mut [f64]) {
    out[0] = 1.0;
    for i in 1..=p {
        let w = 2.0 * PI * hour * i as f64 / 24.0;
        out[2 * i - 1] = w.sin();
        out[2 * i] = w.cos();
    }
}

impl HarmonicAlphaModel {
    pub fn harmonics(&self) -> usize {
        self.beta_sin.len()
    }

    /// Least-squares fit of implied exponents on diurnal harmonics. Rows with
    /// non-positive speeds carry no exponent and are skipped.
    pub fn fit(train: &ShearTrainingSet, harmonics: usize) -> Result<Self> {
        let p = 2 * harmonics + 1;
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        let mut row = vec![0.0; p];
        let mut n = 0;
        for r in train.rows() {
            let Some(alpha) = implied_alpha(r.w10(), r.wh(), r.height) else { continue };
            harmonic_row(r.hour, harmonics, &mut row);
            for i in 0..p {
                xty[i] += row[i] * alpha;
                for j in 0..p {
                    xtx[(i, j)] += row[i] * row[j];
                }
            }
            n += 1;
        }
        if n < p {
            return Err(Error::InsufficientData { needed: p, got: n });
        }
        let sv = xtx.clone().singular_values();
        let (max, min) = (sv.max(), sv.min());
        if !(min > 1e-12 * max) {
            return Err(Error::RankDeficient);
        }
        let beta = xtx.cholesky().ok_or(Error::RankDeficient)?.solve(&xty);
        Ok(Self {
            alpha0: beta[0],
            beta_sin: (1..=harmonics).map(|i| beta[2 * i - 1]).collect(),
            beta_cos: (1..=harmonics).map(|i| beta[2 * i]).collect(),
        })
    }

    pub fn alpha_at(&self, hour: f64) -> f64 {
        let p = self.harmonics();
        let mut row = vec![0.0; 2 * p + 1];
        harmonic_row(hour, p, &mut row);
        let mut a = self.alpha0;
        for i in 1..=p {
            a += self.beta_sin[i - 1] * row[2 * i - 1] + self.beta_cos[i - 1] * row[2 * i];
        }
        a
    }

    pub fn predict(&self, w10: f64, h: f64, hour: f64) -> f64 {
        power_law_extrapolate(w10, h, self.alpha_at(hour))
    }
}

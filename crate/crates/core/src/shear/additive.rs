//! Penalized additive model on the square-root scale:
//!
//! `sqrt(W_h) = b0 + s1(sqrt W10) + s2(h) + s3(h, W10) + b1 sin(2 pi t/24) + b2 cos(2 pi t/24) + b3 U + b4 V`
//!
//! Smooths are cubic B-splines with second-order difference penalties and
//! sum-to-zero constraints; `s3` is a pure interaction built from
//! constrained marginals. Smoothing parameters are chosen by GCV.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bspline::{BSplineBasis, ConstrainedBasis};
use super::{ShearTrainingSet, HEIGHT_RANGE};
use crate::domain::direction_components;
use crate::error::{Error, Result};

pub const ADDITIVE_FORMAT: &str = "hubwind-additive-shear/1";

/// Residual SD floor for (near-)noiseless fits.
const MIN_RESIDUAL_SD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdditiveConfig {
    /// Basis dimension of `s1(sqrt W10)`.
    pub s1_basis: usize,
    /// Basis dimension of `s2(h)`.
    pub s2_basis: usize,
    /// Marginal dimensions `(h, W10)` of the `s3` tensor product.
    pub s3_basis: (usize, usize),
    /// Candidate smoothing parameters, relative to the scaled penalties.
    pub lambda_grid: Vec<f64>,
    /// Coordinate-descent sweeps over the smoothing parameters.
    pub sweeps: usize,
    pub ridge: f64,
}

impl Default for AdditiveConfig {
    fn default() -> Self {
        Self {
            s1_basis: 20,
            s2_basis: 8,
            s3_basis: (6, 6),
            lambda_grid: (0..7).map(|i| 10f64.powf(-6.0 + 1.5 * i as f64)).collect(),
            sweeps: 2,
            ridge: 1e-8,
        }
    }
}

impl AdditiveConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.s1_basis, self.s2_basis, self.s3_basis.0, self.s3_basis.1];
        if dims.iter().any(|d| *d < 4) {
            return Err(Error::invalid("spline basis dimensions must be at least 4"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("smoothing grid must be non-empty and positive"));
        }
        if !(self.ridge > 0.0) {
            return Err(Error::invalid("ridge floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    s1: ConstrainedBasis,
    s2: ConstrainedBasis,
    s3_h: ConstrainedBasis,
    s3_w: ConstrainedBasis,
}

const N_LINEAR: usize = 4;

impl Layout {
    fn s1_offset(&self) -> usize {
        1
    }
    fn s2_offset(&self) -> usize {
        1 + self.s1.dim()
    }
    fn s3_offset(&self) -> usize {
        self.s2_offset() + self.s2.dim()
    }
    fn s3_dim(&self) -> usize {
        self.s3_h.dim() * self.s3_w.dim()
    }
    fn linear_offset(&self) -> usize {
        self.s3_offset() + self.s3_dim()
    }
    fn dim(&self) -> usize {
        self.linear_offset() + N_LINEAR
    }

    #[allow(clippy::too_many_arguments)]
    fn design_row(&self, sqrt_w10: f64, h: f64, hour: f64, u: f64, v: f64, out: &mut [f64], scratch: &mut Scratch) {
        out[0] = 1.0;
        let o1 = self.s1_offset();
        self.s1.eval_into(sqrt_w10, &mut out[o1..o1 + self.s1.dim()]);
        let o2 = self.s2_offset();
        self.s2.eval_into(h, &mut out[o2..o2 + self.s2.dim()]);
        self.s3_h.eval_into(h, &mut scratch.h);
        self.s3_w.eval_into(sqrt_w10 * sqrt_w10, &mut scratch.w);
        let o3 = self.s3_offset();
        let dw = self.s3_w.dim();
        for (a, bh) in scratch.h.iter().enumerate() {
            for (b, bw) in scratch.w.iter().enumerate() {
                out[o3 + a * dw + b] = bh * bw;
            }
        }
        let ol = self.linear_offset();
        let w = 2.0 * PI * hour / 24.0;
        out[ol] = w.sin();
        out[ol + 1] = w.cos();
        out[ol + 2] = u;
        out[ol + 3] = v;
    }

    fn scratch(&self) -> Scratch {
        Scratch { h: vec![0.0; self.s3_h.dim()], w: vec![0.0; self.s3_w.dim()] }
    }
}

struct Scratch {
    h: Vec<f64>,
    w: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Penalty {
    offset: usize,
    matrix: DMatrix<f64>,
}

/// Result of one penalized solve at fixed smoothing parameters.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub coefficients: DVector<f64>,
    /// Effective degrees of freedom, `tr((X'X + S)^-1 X'X)`.
    pub edf: f64,
    /// Residual sum of squares from the normal-equation identity.
    pub rss: f64,
    /// Minimised value of `||y - X b||^2 + b' S b`.
    pub objective: f64,
    pub gcv: f64,
}

/// Sufficient statistics and penalties for a training set; solves the
/// penalized normal equations for any smoothing-parameter vector.
#[derive(Debug, Clone)]
pub struct AdditiveFitter {
    layout: Layout,
    config: AdditiveConfig,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
    penalties: Vec<Penalty>,
    sqrt_w10_range: (f64, f64),
}

impl AdditiveFitter {
    pub fn new(train: &ShearTrainingSet, config: &AdditiveConfig) -> Result<Self> {
        config.validate()?;
        let rows = train.rows();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in rows {
            lo = lo.min(r.sqrt_w10);
            hi = hi.max(r.sqrt_w10);
        }
        let (hl, hh) = HEIGHT_RANGE;
        let heights = || rows.iter().map(|r| &r.height);
        let w10s: Vec<f64> = rows.iter().map(|r| r.w10()).collect();
        let layout = Layout {
            s1: ConstrainedBasis::fit(BSplineBasis::new(lo, hi, config.s1_basis), rows.iter().map(|r| &r.sqrt_w10)),
            s2: ConstrainedBasis::fit(BSplineBasis::new(hl, hh, config.s2_basis), heights()),
            s3_h: ConstrainedBasis::fit(BSplineBasis::new(hl, hh, config.s3_basis.0), heights()),
            s3_w: ConstrainedBasis::fit(BSplineBasis::new(lo * lo, hi * hi, config.s3_basis.1), w10s.iter()),
        };
        let p = layout.dim();
        if rows.len() < p {
            return Err(Error::InsufficientData { needed: p, got: rows.len() });
        }

        // upper triangle of X'X, accumulated row by row
        let mut xtx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut yty = 0.0;
        let mut x = vec![0.0; p];
        let mut scratch = layout.scratch();
        for r in rows {
            layout.design_row(r.sqrt_w10, r.height, r.hour, r.u, r.v, &mut x, &mut scratch);
            let y = r.sqrt_wh;
            yty += y * y;
            for i in 0..p {
                let xi = x[i];
                if xi == 0.0 {
                    continue;
                }
                xty[i] += xi * y;
                let row = &mut xtx[i * p..(i + 1) * p];
                for j in i..p {
                    row[j] += xi * x[j];
                }
            }
        }
        let mut xtx = DMatrix::from_row_slice(p, p, &xtx);
        for i in 0..p {
            for j in 0..i {
                xtx[(i, j)] = xtx[(j, i)];
            }
        }

        let d3w = layout.s3_w.dim();
        let d3h = layout.s3_h.dim();
        let raw = [
            (layout.s1_offset(), layout.s1.penalty()),
            (layout.s2_offset(), layout.s2.penalty()),
            (layout.s3_offset(), layout.s3_h.penalty().kronecker(&DMatrix::identity(d3w, d3w))),
            (layout.s3_offset(), DMatrix::identity(d3h, d3h).kronecker(&layout.s3_w.penalty())),
        ];
        let penalties = raw
            .into_iter()
            .map(|(offset, s)| {
                // scale so a unit smoothing parameter balances data and penalty
                let k = s.nrows();
                let block_norm = xtx.view((offset, offset), (k, k)).norm();
                let s_norm = s.norm();
                let scale = if s_norm > 0.0 && block_norm > 0.0 { block_norm / s_norm } else { 1.0 };
                Penalty { offset, matrix: s * scale }
            })
            .collect();

        Ok(Self {
            layout,
            config: config.clone(),
            xtx,
            xty: DVector::from_vec(xty),
            yty,
            n: rows.len(),
            penalties,
            sqrt_w10_range: (lo, hi),
        })
    }

    pub fn n_coefficients(&self) -> usize {
        self.layout.dim()
    }

    /// Number of smoothing parameters (one per penalty).
    pub fn n_smoothing(&self) -> usize {
        self.penalties.len()
    }

    pub fn solve(&self, lambdas: &[f64]) -> Result<PenalizedSolution> {
        if lambdas.len() != self.penalties.len() {
            return Err(Error::invalid(format!("expected {} smoothing parameters", self.penalties.len())));
        }
        let p = self.layout.dim();
        let mut pen = DMatrix::<f64>::zeros(p, p);
        for (pe, lam) in self.penalties.iter().zip(lambdas) {
            let k = pe.matrix.nrows();
            let mut view = pen.view_mut((pe.offset, pe.offset), (k, k));
            view += &pe.matrix * *lam;
        }
        for i in 0..p {
            pen[(i, i)] += self.config.ridge;
        }
        let a = &self.xtx + &pen;
        let chol = a.cholesky().ok_or(Error::NotPositiveDefinite { attempts: 0 })?;
        let beta = chol.solve(&self.xty);
        let a_inv = chol.inverse();
        // tr(A^-1 X'X) = p - tr(A^-1 S)
        let edf = p as f64 - a_inv.component_mul(&pen).sum();
        let bxty = beta.dot(&self.xty);
        let objective = self.yty - bxty;
        let rss = (self.yty - 2.0 * bxty + (beta.transpose() * &self.xtx * &beta)[(0, 0)]).max(0.0);
        let n = self.n as f64;
        let gcv = n * rss / (n - edf).powi(2);
        Ok(PenalizedSolution { coefficients: beta, edf, rss, objective, gcv })
    }

    /// Coordinate descent over the smoothing grid minimising GCV.
    pub fn select_smoothing(&self) -> Result<Vec<f64>> {
        let grid = &self.config.lambda_grid;
        let mut idx = vec![grid.len() / 2; self.penalties.len()];
        let lambdas = |idx: &[usize]| idx.iter().map(|i| grid[*i]).collect::<Vec<_>>();
        let mut best = self.solve(&lambdas(&idx))?.gcv;
        for _ in 0..self.config.sweeps {
            for j in 0..idx.len() {
                for g in 0..grid.len() {
                    if g == idx[j] {
                        continue;
                    }
                    let mut trial = idx.clone();
                    trial[j] = g;
                    let score = self.solve(&lambdas(&trial))?.gcv;
                    if score < best {
                        best = score;
                        idx = trial;
                    }
                }
            }
        }
        Ok(lambdas(&idx))
    }

    pub fn finish(&self, train: &ShearTrainingSet, lambdas: &[f64]) -> Result<AdditiveShearModel> {
        let sol = self.solve(lambdas)?;
        let mut model = AdditiveShearModel {
            format: ADDITIVE_FORMAT.to_string(),
            layout: self.layout.clone(),
            coefficients: sol.coefficients.as_slice().to_vec(),
            lambdas: lambdas.to_vec(),
            edf: sol.edf,
            residual_variance: 0.0,
            n_train: self.n,
            sqrt_w10_range: self.sqrt_w10_range,
        };
        // exact residuals rather than the normal-equation identity
        let mut x = vec![0.0; self.layout.dim()];
        let mut scratch = self.layout.scratch();
        let rss: f64 = train
            .rows()
            .iter()
            .map(|r| {
                self.layout.design_row(r.sqrt_w10, r.height, r.hour, r.u, r.v, &mut x, &mut scratch);
                let fitted: f64 = x.iter().zip(&model.coefficients).map(|(a, b)| a * b).sum();
                (r.sqrt_wh - fitted).powi(2)
            })
            .sum();
        let dof = (self.n as f64 - sol.edf).max(1.0);
        model.residual_variance = (rss / dof).max(MIN_RESIDUAL_SD * MIN_RESIDUAL_SD);
        Ok(model)
    }
}

/// Fitted additive extrapolation model for one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveShearModel {
    pub format: String,
    layout: Layout,
    pub coefficients: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub edf: f64,
    /// Residual variance on the square-root scale.
    pub residual_variance: f64,
    pub n_train: usize,
    pub sqrt_w10_range: (f64, f64),
}

impl AdditiveShearModel {
    pub fn fit(train: &ShearTrainingSet, config: &AdditiveConfig) -> Result<Self> {
        let fitter = AdditiveFitter::new(train, config)?;
        let lambdas = fitter.select_smoothing()?;
        fitter.finish(train, &lambdas)
    }

    /// Residual SD on the square-root scale; always positive.
    pub fn residual_sd(&self) -> f64 {
        self.residual_variance.sqrt()
    }

    /// Square-root-scale mean and residual SD at hub height `h` for a 10 m
    /// observation. `h` must lie in [50, 100] m; 10 m speeds outside the
    /// training range are clamped to it.
    pub fn predict(&self, w10: f64, h: f64, hour: f64, direction: f64) -> Result<(f64, f64)> {
        if !(HEIGHT_RANGE.0..=HEIGHT_RANGE.1).contains(&h) {
            return Err(Error::domain(format!("hub height {h} m outside [50, 100]")));
        }
        if !(w10 >= 0.0) || !hour.is_finite() || !direction.is_finite() {
            return Err(Error::domain(format!("invalid inputs w10={w10}, hour={hour}, direction={direction}")));
        }
        let (lo, hi) = self.sqrt_w10_range;
        let s = w10.sqrt().clamp(lo, hi);
        let (u, v) = direction_components(direction);
        let mut x = vec![0.0; self.layout.dim()];
        let mut scratch = self.layout.scratch();
        self.layout.design_row(s, h, hour, u, v, &mut x, &mut scratch);
        let mean = x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum();
        Ok((mean, self.residual_sd()))
    }

    pub fn check_format(&self) -> Result<()> {
        if self.format != ADDITIVE_FORMAT {
            return Err(Error::Format(self.format.clone()));
        }
        Ok(())
    }
}

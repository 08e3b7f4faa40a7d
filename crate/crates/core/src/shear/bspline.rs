//! Uniform cubic B-spline bases with difference penalties and sum-to-zero
//! constraint absorption.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Cubic B-spline basis with equally spaced knots on `[lo, hi]`. Evaluation
/// outside the interval clamps to the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub lo: f64,
    pub hi: f64,
    pub n_basis: usize,
}

impl BSplineBasis {
    /// `n_basis` must be at least 4.
    pub fn new(lo: f64, hi: f64, n_basis: usize) -> Self {
        assert!(n_basis >= 4, "cubic basis needs at least 4 functions");
        let hi = if hi > lo { hi } else { lo + 1e-6 };
        Self { lo, hi, n_basis }
    }

    fn intervals(&self) -> usize {
        self.n_basis - 3
    }

    /// Index of the first non-zero function and the four non-zero values.
    pub fn eval_local(&self, x: f64) -> (usize, [f64; 4]) {
        let n_int = self.intervals();
        let dx = (self.hi - self.lo) / n_int as f64;
        let x = x.clamp(self.lo, self.hi);
        let pos = (x - self.lo) / dx;
        let i = (pos.floor() as usize).min(n_int - 1);
        let u = pos - i as f64;
        let u2 = u * u;
        let u3 = u2 * u;
        let w = 1.0 - u;
        (
            i,
            [
                w * w * w / 6.0,
                (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
                (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
                u3 / 6.0,
            ],
        )
    }

    pub fn eval_dense(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis];
        let (i, vals) = self.eval_local(x);
        out[i..i + 4].copy_from_slice(&vals);
        out
    }

    /// `D'D` for the second-order difference matrix `D`.
    pub fn second_difference_penalty(&self) -> DMatrix<f64> {
        let k = self.n_basis;
        let mut d = DMatrix::zeros(k - 2, k);
        for r in 0..k - 2 {
            d[(r, r)] = 1.0;
            d[(r, r + 1)] = -2.0;
            d[(r, r + 2)] = 1.0;
        }
        d.transpose() * d
    }
}

/// Null-space basis `Z` (k x (k-1)) of the constraint `c' beta = 0`, built
/// from a Householder reflection.
pub fn constraint_null_space(c: &[f64]) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut v = c.to_vec();
    if norm == 0.0 {
        return DMatrix::identity(k, k).columns(1, k - 1).into_owned();
    }
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let mut z = DMatrix::zeros(k, k - 1);
    for i in 0..k {
        for j in 1..k {
            let id = if i == j { 1.0 } else { 0.0 };
            z[(i, j - 1)] = id - 2.0 * v[i] * v[j] / vv;
        }
    }
    z
}

/// A marginal basis after absorbing a sum-to-zero constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedBasis {
    pub basis: BSplineBasis,
    /// Row-major `n_basis x (n_basis - 1)` null-space matrix.
    z: Vec<f64>,
}

impl ConstrainedBasis {
    /// Centres the basis over the sample `xs`.
    pub fn fit<'a>(basis: BSplineBasis, xs: impl Iterator<Item = &'a f64>) -> Self {
        let mut sums = vec![0.0; basis.n_basis];
        for x in xs {
            let (i, vals) = basis.eval_local(*x);
            for (s, v) in sums[i..i + 4].iter_mut().zip(vals) {
                *s += v;
            }
        }
        let z = constraint_null_space(&sums);
        let z = (0..z.nrows()).flat_map(|r| z.row(r).iter().copied().collect::<Vec<_>>()).collect();
        Self { basis, z }
    }

    pub fn dim(&self) -> usize {
        self.basis.n_basis - 1
    }

    pub fn z_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.basis.n_basis, self.dim(), &self.z)
    }

    /// Writes the constrained basis row for `x` into `out` (length `dim()`).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let m = self.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        let (i, vals) = self.basis.eval_local(x);
        for (r, v) in (i..i + 4).zip(vals) {
            let zr = &self.z[r * m..(r + 1) * m];
            for (o, zv) in out.iter_mut().zip(zr) {
                *o += v * zv;
            }
        }
    }

    pub fn penalty(&self) -> DMatrix<f64> {
        let z = self.z_matrix();
        z.transpose() * self.basis.second_difference_penalty() * z
    }
}

//! Unconstrained quasi-Newton minimisation (BFGS) with central
//! finite-difference gradients and a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the relative change in the objective falls below this.
    pub rel_tol: f64,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
    /// Central-difference step.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, rel_tol: 1e-8, grad_tol: 1e-6, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStatus {
    Converged,
    /// Hit the iteration cap; the best point seen is returned.
    MaxIterations,
    /// The line search could not make progress.
    Stalled,
}

impl ConvergenceStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConvergenceStatus::Converged => "converged",
            ConvergenceStatus::MaxIterations => "max_iterations",
            ConvergenceStatus::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: ConvergenceStatus,
}

/// Central-difference gradient. Non-finite objective values on either side
/// fall back to a one-sided difference.
pub fn fd_gradient<F>(f: &mut F, x: &DVector<f64>, fx: f64, step: f64, evals: &mut usize) -> DVector<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + step;
        let fp = f(probe.as_slice());
        probe[i] = xi - step;
        let fm = f(probe.as_slice());
        probe[i] = xi;
        *evals += 2;
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * step),
            (true, false) => (fp - fx) / step,
            (false, true) => (fx - fm) / step,
            (false, false) => 0.0,
        };
    }
    g
}

/// Minimises `f` from `x0`. Non-finite objective values are treated as
/// infeasible and rejected by the line search.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    evals += 1;
    if !fx.is_finite() {
        return BfgsResult {
            x: x0.to_vec(),
            value: fx,
            iterations: 0,
            evaluations: evals,
            status: ConvergenceStatus::Stalled,
        };
    }
    let mut g = fd_gradient(&mut f, &x, fx, opts.fd_step, &mut evals);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut first_step = true;

    for iter in 1..=opts.max_iter {
        if g.norm() < opts.grad_tol {
            return finish(x, fx, iter - 1, evals, ConvergenceStatus::Converged);
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            // lost positive definiteness; restart from steepest descent
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        if first_step {
            // keep the first steepest-descent step modest in size
            let scale = (1.0 / dir.norm()).min(1.0);
            dir *= scale;
            slope *= scale;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + step * &dir;
            let ft = f(trial.as_slice());
            evals += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            return finish(x, fx, iter, evals, ConvergenceStatus::Stalled);
        };

        let g_new = fd_gradient(&mut f, &x_new, f_new, opts.fd_step, &mut evals);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_step {
                // Shanno-Phua scaling of the initial inverse Hessian
                h_inv = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (rho * rho * yhy + rho) * (&s * s.transpose()) - rho * (&hy * s.transpose() + &s * hy.transpose());
            first_step = false;
        }

        let rel_change = (fx - f_new).abs() / fx.abs().max(1e-300);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel_change < opts.rel_tol {
            return finish(x, fx, iter, evals, ConvergenceStatus::Converged);
        }
    }
    finish(x, fx, opts.max_iter, evals, ConvergenceStatus::MaxIterations)
}

fn finish(x: DVector<f64>, value: f64, iterations: usize, evaluations: usize, status: ConvergenceStatus) -> BfgsResult {
    BfgsResult { x: x.as_slice().to_vec(), value, iterations, evaluations, status }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2) + 0.5 * x[0] * x[1];
        let r = minimize(f, &[0.0, 0.0], &BfgsOptions::default());
        assert_eq!(r.status, ConvergenceStatus::Converged);
        let g0 = 2.0 * (r.x[0] - 3.0) + 0.5 * r.x[1];
        let g1 = 20.0 * (r.x[1] + 1.0) + 0.5 * r.x[0];
        assert!(g0.abs() < 1e-4 && g1.abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = BfgsOptions { rel_tol: 1e-14, ..Default::default() };
        let r = minimize(f, &[-1.2, 1.0], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 2e-3, "{:?} {:?}", r.x, r.status);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // log barrier: infinite for x <= 0
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::INFINITY } else { x[0] - 2.0 * x[0].ln() };
        let r = minimize(f, &[0.5], &BfgsOptions::default());
        assert!((r.x[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| x[0].sin() + 0.1 * x[0] * x[0];
        let x0 = [2.0];
        let r = minimize(f, &x0, &BfgsOptions::default());
        assert!(r.value <= f(&x0));
    }
}

//! Special functions: the modified Bessel function K₁, plus thin wrappers
//! over `statrs` for Γ and the standard normal quantile.

use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, Normal};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_CUTOFF: f64 = 2.0;
const MAX_TERMS: usize = 500;

/// Modified Bessel function of the second kind, order one, for `x > 0`.
///
/// Uses the ascending series for `x <= 2` and Steed's continued fraction
/// (Temme's form) above. Returns `+inf` at zero and `NaN` for negative input.
pub fn bessel_k1(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::INFINITY;
    }
    if x <= SERIES_CUTOFF {
        k1_series(x)
    } else if x > 705.0 {
        0.0
    } else {
        k0_k1_continued_fraction(x).1
    }
}

/// `x K₁(x)`, continuous at the origin where it tends to 1.
pub fn scaled_k1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x > 705.0 {
        return 0.0;
    }
    x * bessel_k1(x)
}

fn k1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    // I1(x) = (x/2) sum q^k / (k! (k+1)!)
    // K1(x) = 1/x + ln(x/2) I1(x) - (x/4) sum (psi(k+1) + psi(k+2)) q^k / (k! (k+1)!)
    let mut term = 1.0;
    let mut psi_a = -EULER_GAMMA;
    let mut psi_b = 1.0 - EULER_GAMMA;
    let mut i_sum = 0.0;
    let mut psi_sum = 0.0;
    for k in 0..MAX_TERMS {
        i_sum += term;
        psi_sum += (psi_a + psi_b) * term;
        if term < 1e-17 * i_sum {
            break;
        }
        let kf = k as f64;
        term *= q / ((kf + 1.0) * (kf + 2.0));
        psi_a += 1.0 / (kf + 1.0);
        psi_b += 1.0 / (kf + 2.0);
    }
    let i1 = 0.5 * x * i_sum;
    1.0 / x + (0.5 * x).ln() * i1 - 0.25 * x * psi_sum
}

/// Returns `(K₀(x), K₁(x))` for `x >= 2`.
fn k0_k1_continued_fraction(x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_TERMS {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    h *= a1;
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided standard normal critical value for a central interval of the
/// given level, e.g. 1.959964 for 0.95.
pub fn two_sided_z(level: f64) -> f64 {
    normal_quantile(0.5 + 0.5 * level)
}

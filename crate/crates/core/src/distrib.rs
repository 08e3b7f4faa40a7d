//! Weibull climatology, empirical CDFs, quantile mapping and vertical
//! profile densification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::gamma;

/// Heights of the three reanalysis target levels, in metres.
pub const PROFILE_HEIGHTS: [f64; 3] = [50.0, 75.0, 100.0];
/// Spacing of the densified pseudo-observations.
pub const DENSIFY_STEP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    /// Shape.
    pub k: f64,
    /// Scale in m/s.
    pub lambda: f64,
}

impl WeibullParams {
    pub fn new(k: f64, lambda: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) || !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("Weibull parameters must be positive, got k={k}, lambda={lambda}")));
        }
        Ok(Self { k, lambda })
    }

    pub fn mean(&self) -> f64 {
        self.lambda * gamma(1.0 + 1.0 / self.k)
    }

    pub fn variance(&self) -> f64 {
        let g1 = gamma(1.0 + 1.0 / self.k);
        let g2 = gamma(1.0 + 2.0 / self.k);
        self.lambda * self.lambda * (g2 - g1 * g1)
    }

    /// Distribution of `sqrt(W)` when `W` follows `self`.
    pub fn sqrt_distribution(&self) -> WeibullParams {
        WeibullParams { k: 2.0 * self.k, lambda: self.lambda.sqrt() }
    }

    /// Moment-matched parameters for a given mean and variance.
    pub fn from_moments(mean: f64, variance: f64) -> Result<Self> {
        if !(mean > 0.0) || !(variance > 0.0) {
            return Err(Error::invalid("moments must be positive"));
        }
        let target = variance / (mean * mean);
        // squared coefficient of variation is decreasing in k
        let cv2 = |k: f64| {
            let g1 = gamma(1.0 + 1.0 / k);
            gamma(1.0 + 2.0 / k) / (g1 * g1) - 1.0
        };
        let (mut lo, mut hi) = (0.1, 100.0);
        if !(cv2(hi) < target && target < cv2(lo)) {
            return Err(Error::invalid(format!("coefficient of variation {} out of range", target.sqrt())));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cv2(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k = 0.5 * (lo + hi);
        Self::new(k, mean / gamma(1.0 + 1.0 / k))
    }
}

pub fn weibull_cdf(x: f64, p: &WeibullParams) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::domain(format!("Weibull CDF undefined at {x}")));
    }
    Ok(-(-(x / p.lambda).powf(p.k)).exp_m1())
}

pub fn weibull_quantile(prob: f64, p: &WeibullParams) -> Result<f64> {
    if !(0.0..1.0).contains(&prob) {
        return Err(Error::domain(format!("probability {prob} outside [0, 1)")));
    }
    Ok(p.lambda * (-(-prob).ln_1p()).powf(1.0 / p.k))
}

/// `E[sqrt(W)] = sqrt(lambda) * Γ(1 + 1/(2k))`.
pub fn mean_sqrt_wind(p: &WeibullParams) -> f64 {
    p.lambda.sqrt() * gamma(1.0 + 0.5 / p.k)
}

/// Empirical CDF with `rank / (n + 1)` plotting positions; tied values get
/// the average rank of their group.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(series: &[f64]) -> Result<Self> {
        if series.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: series.len() });
        }
        if let Some(bad) = series.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::domain(format!("wind speed {bad} is not a finite non-negative value")));
        }
        let mut sorted = series.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    /// Plotting position of `w`, strictly inside (0, 1).
    pub fn probability(&self, w: f64) -> f64 {
        let below = self.sorted.partition_point(|v| *v < w);
        let through = self.sorted.partition_point(|v| *v <= w);
        let ties = through - below;
        let rank = below as f64 + (ties as f64 + 1.0) / 2.0;
        rank / (self.sorted.len() as f64 + 1.0)
    }
}

/// Replaces each value by the target Weibull quantile at its empirical
/// plotting position. Rank order is preserved.
pub fn quantile_map(series: &[f64], target: &WeibullParams) -> Result<Vec<f64>> {
    let ecdf = EmpiricalCdf::new(series)?;
    series.iter().map(|w| weibull_quantile(ecdf.probability(*w), target)).collect()
}

/// Wind speeds at 50, 75 and 100 m for one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalProfile {
    pub speeds: [f64; 3],
}

impl VerticalProfile {
    pub fn new(w50: f64, w75: f64, w100: f64) -> Result<Self> {
        let speeds = [w50, w75, w100];
        if speeds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::domain(format!("profile speeds must be non-negative, got {speeds:?}")));
        }
        Ok(Self { speeds })
    }

    /// Quadratic through the three levels, clamped at zero.
    pub fn evaluate(&self, h: f64) -> f64 {
        let [h0, h1, h2] = PROFILE_HEIGHTS;
        let l0 = (h - h1) * (h - h2) / ((h0 - h1) * (h0 - h2));
        let l1 = (h - h0) * (h - h2) / ((h1 - h0) * (h1 - h2));
        let l2 = (h - h0) * (h - h1) / ((h2 - h0) * (h2 - h1));
        (self.speeds[0] * l0 + self.speeds[1] * l1 + self.speeds[2] * l2).max(0.0)
    }
}

/// Heights 50, 55, ..., 100.
pub fn densified_heights() -> impl Iterator<Item = f64> {
    let n = ((PROFILE_HEIGHTS[2] - PROFILE_HEIGHTS[0]) / DENSIFY_STEP).round() as usize;
    (0..=n).map(|i| PROFILE_HEIGHTS[0] + i as f64 * DENSIFY_STEP)
}

/// Pseudo-observations `(height, speed)` at 5 m spacing over 50-100 m.
pub fn densify_profile(profile: &VerticalProfile) -> Vec<(f64, f64)> {
    densified_heights().map(|h| (h, profile.evaluate(h))).collect()
}

/// Power-law interpolation of atlas mean wind speeds between 50 and 100 m.
pub fn gwa_mean_at_height(mean50: f64, mean100: f64, h: f64) -> Result<f64> {
    if !(mean50 > 0.0) || !(mean100 > 0.0) {
        return Err(Error::invalid(format!("atlas means must be positive, got {mean50}, {mean100}")));
    }
    if !(50.0..=100.0).contains(&h) {
        return Err(Error::domain(format!("height {h} m outside [50, 100]")));
    }
    let alpha = (mean100 / mean50).ln() / 2f64.ln();
    Ok(mean100 * (h / 100.0).powf(alpha))
}

/// Mean square-root wind speed at height `h` used as the spatial mean
/// covariate: the atlas mean interpolated to `h`, converted under a Weibull
/// with the given shape.
pub fn gwa_mean_sqrt_at_height(mean50: f64, mean100: f64, h: f64, shape: f64) -> Result<f64> {
    let mean = gwa_mean_at_height(mean50, mean100, h)?;
    let params = WeibullParams::new(shape, mean / gamma(1.0 + 1.0 / shape))?;
    Ok(mean_sqrt_wind(&params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Weibull};

    fn wb(k: f64, l: f64) -> WeibullParams {
        WeibullParams::new(k, l).unwrap()
    }

    const ONE_MINUS_INV_E: f64 = 0.632_120_558_828_557_7;

    #[test]
    fn cdf_examples() {
        let p = wb(2.0, 10.0);
        assert_eq!(weibull_cdf(0.0, &p).unwrap(), 0.0);
        assert!((weibull_cdf(10.0, &p).unwrap() - ONE_MINUS_INV_E).abs() < 1e-15);
        assert!((weibull_cdf(3.3, &wb(1.7, 3.3)).unwrap() - ONE_MINUS_INV_E).abs() < 1e-15);
        assert!(weibull_cdf(-1.0, &p).is_err());
    }

    #[test]
    fn quantile_examples() {
        let p = wb(2.0, 10.0);
        assert_eq!(weibull_quantile(0.0, &p).unwrap(), 0.0);
        assert!((weibull_quantile(ONE_MINUS_INV_E, &p).unwrap() - 10.0).abs() < 1e-12);
        assert!(weibull_quantile(1.0, &p).is_err());
        assert!(weibull_quantile(-0.1, &p).is_err());
    }

    #[test]
    fn median_matches_root_find() {
        // bisection on the CDF as an independent route
        let p = wb(2.0, 10.0);
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if weibull_cdf(mid, &p).unwrap() < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = weibull_quantile(0.5, &p).unwrap();
        assert!((q - 0.5 * (lo + hi)).abs() < 1e-10);
        assert!((q - 8.325_546_111_576_977).abs() < 1e-12);
    }

    fn monte_carlo_mean_sqrt(p: &WeibullParams, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Weibull::new(p.lambda, p.k).unwrap();
        let mut sum = 0.0;
        for _ in 0..n {
            let w: f64 = dist.sample(&mut rng);
            sum += w.sqrt();
        }
        sum / n as f64
    }

    #[test]
    fn mean_sqrt_wind_examples() {
        assert!((mean_sqrt_wind(&wb(0.5, 1.0)) - 1.0).abs() < 1e-12);
        let p = wb(2.0, 10.0);
        let mc = monte_carlo_mean_sqrt(&p, 10_000_000, 11);
        assert!((mean_sqrt_wind(&p) - mc).abs() < 1e-3, "{mc}");
        let p = wb(1.0, 4.0);
        let mc = monte_carlo_mean_sqrt(&p, 10_000_000, 12);
        assert!((mean_sqrt_wind(&p) - mc).abs() < 1e-3, "{mc}");
        assert!((mean_sqrt_wind(&p) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn plotting_positions() {
        let e = EmpiricalCdf::new(&[3.0, 1.0, 2.0, 4.0]).unwrap();
        assert!((e.probability(4.0) - 0.8).abs() < 1e-15);
        let e = EmpiricalCdf::new(&[5.0, 5.0, 5.0]).unwrap();
        assert!((e.probability(5.0) - 0.5).abs() < 1e-15);
        let nine: Vec<f64> = (1..=9).map(f64::from).collect();
        let e = EmpiricalCdf::new(&nine).unwrap();
        assert!((e.probability(1.0) - 0.1).abs() < 1e-15);
        assert!(EmpiricalCdf::new(&[1.0]).is_err());
        assert!(EmpiricalCdf::new(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn constant_series_maps_to_median() {
        let p = wb(2.0, 8.0);
        let out = quantile_map(&[4.0; 7], &p).unwrap();
        let median = weibull_quantile(0.5, &p).unwrap();
        assert!(out.iter().all(|v| (v - median).abs() < 1e-12));
    }

    fn ks_statistic(sample: &[f64], p: &WeibullParams) -> f64 {
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, x)| {
                let f = weibull_cdf(*x, p).unwrap();
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn self_mapping_is_near_identity() {
        let p = wb(2.1, 8.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = Weibull::new(p.lambda, p.k).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let out = quantile_map(&xs, &p).unwrap();
        assert!(ks_statistic(&out, &p) < 0.02);
        assert!(ks_statistic(&xs, &p) < 0.02);
        let rms = (xs.iter().zip(&out).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!(rms < 0.1, "rms shift {rms}");
    }

    #[test]
    fn densify_examples() {
        let prof = VerticalProfile::new(6.0, 7.0, 7.5).unwrap();
        let pts = densify_profile(&prof);
        assert_eq!(pts.len(), 11);
        let at60 = pts.iter().find(|(h, _)| *h == 60.0).unwrap().1;
        assert!((at60 - 6.46).abs() < 1e-12);
        assert_eq!(prof.evaluate(75.0), 7.0);
        let flat = densify_profile(&VerticalProfile::new(5.0, 5.0, 5.0).unwrap());
        assert!(flat.iter().all(|(_, s)| (s - 5.0).abs() < 1e-12));
        // a profile that dips below zero between knots is clamped
        let dip = VerticalProfile::new(1.0, 0.0, 1.0).unwrap();
        assert!(densify_profile(&dip).iter().all(|(_, s)| *s >= 0.0));
    }

    #[test]
    fn gwa_interpolation() {
        assert!((gwa_mean_at_height(6.0, 7.2, 100.0).unwrap() - 7.2).abs() < 1e-12);
        assert!((gwa_mean_at_height(6.0, 7.2, 50.0).unwrap() - 6.0).abs() < 1e-12);
        let v = gwa_mean_at_height(6.0, 7.2, 80.0).unwrap();
        // log-log linear interpolation between (ln 50, ln 6) and (ln 100, ln 7.2)
        let t = (80f64.ln() - 50f64.ln()) / (100f64.ln() - 50f64.ln());
        let loglin = (6f64.ln() + t * (7.2f64.ln() - 6f64.ln())).exp();
        assert!((v - loglin).abs() < 1e-12);
        assert!((v - 6.79).abs() < 0.01);
        assert!(gwa_mean_at_height(0.0, 7.2, 80.0).is_err());
        assert!(gwa_mean_at_height(6.0, 7.2, 120.0).is_err());
    }

    #[test]
    fn moment_matching_round_trip() {
        let p = wb(2.3, 9.1);
        let q = WeibullParams::from_moments(p.mean(), p.variance()).unwrap();
        assert!((q.k - p.k).abs() < 1e-9 && (q.lambda - p.lambda).abs() < 1e-9);
    }

    #[test]
    fn sqrt_closure_moments() {
        let p = wb(2.0, 9.0);
        let s = p.sqrt_distribution();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Weibull::new(p.lambda, p.k).unwrap();
        let n = 1_000_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let r: f64 = dist.sample(&mut rng);
            let r = r.sqrt();
            m1 += r;
            m2 += r * r;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        let want2 = s.variance() + s.mean().powi(2);
        assert!((m1 / s.mean() - 1.0).abs() < 0.005);
        assert!((m2 / want2 - 1.0).abs() < 0.005);
    }

    proptest! {
        #[test]
        fn quantile_inverts_cdf(x in 1e-3f64..40.0, k in 0.8f64..4.0, l in 2.0f64..12.0) {
            let p = wb(k, l);
            let c = weibull_cdf(x, &p).unwrap();
            prop_assume!(c < 1.0 - 1e-6);
            let back = weibull_quantile(c, &p).unwrap();
            prop_assert!((back - x).abs() <= 1e-9 * x);
        }

        #[test]
        fn quantile_map_preserves_ranks(xs in proptest::collection::vec(0.0f64..30.0, 2..60)) {
            let out = quantile_map(&xs, &wb(2.0, 8.0)).unwrap();
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    if xs[i] < xs[j] {
                        prop_assert!(out[i] < out[j]);
                    } else if xs[i] == xs[j] {
                        prop_assert_eq!(out[i], out[j]);
                    }
                }
            }
        }

        #[test]
        fn densify_hits_knots(a in 0.0f64..20.0, b in 0.0f64..20.0, c in 0.0f64..20.0) {
            let prof = VerticalProfile::new(a, b, c).unwrap();
            for (h, want) in PROFILE_HEIGHTS.iter().zip([a, b, c]) {
                prop_assert!((prof.evaluate(*h) - want).abs() <= 1e-10 * want.max(1.0));
            }
        }
    }
}

//! Finite Gaussian mixtures with closed-form moments.

use crate::error::{NesError, Result};
use crate::special::{log_sum_exp, norm_cdf, norm_pdf};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A K-component Gaussian mixture in absolute log-return units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stdevs: Vec<f64>,
}

/// Mean, variance, skewness and (non-excess) kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

impl GaussianMixture {
    /// Validates and builds a mixture. Weights must already sum to one.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stdevs: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stdevs.len() != k {
            return Err(NesError::invalid("mixture vectors must share a length K >= 1"));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(NesError::invalid("mixture weights must lie in [0, 1]"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(NesError::invalid(format!("mixture weights sum to {s}, not 1")));
        }
        if stdevs.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(NesError::invalid("mixture stdevs must be positive and finite"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(NesError::invalid("mixture means must be finite"));
        }
        Ok(GaussianMixture { weights, means, stdevs })
    }

    /// Builds a mixture from nonnegative unnormalized weights.
    pub fn from_unnormalized(weights: Vec<f64>, means: Vec<f64>, stdevs: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(NesError::invalid("mixture weights must have a positive finite sum"));
        }
        let w = weights.iter().map(|w| w / s).collect();
        Self::new(w, means, stdevs)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn means(&self) -> &[f64] {
        &self.means
    }
    pub fn stdevs(&self) -> &[f64] {
        &self.stdevs
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stdevs)
            .map(|((&w, &m), &s)| (w, m, s))
    }

    /// Probability density at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        self.components().map(|(w, m, s)| w * norm_pdf((x - m) / s) / s).sum()
    }

    /// Logarithm of the density, finite far into the tails.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .components()
            .map(|(w, m, s)| {
                let z = (x - m) / s;
                w.ln() - 0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        self.components().map(|(w, m, s)| w * norm_cdf((x - m) / s)).sum()
    }

    /// Survival function `1 - cdf(x)` without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        self.components().map(|(w, m, s)| w * norm_cdf((m - x) / s)).sum()
    }

    /// `ln cdf(x)`, accurate in the far lower tail.
    pub fn ln_cdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .components()
            .map(|(w, m, s)| w.ln() + crate::special::ln_norm_cdf((x - m) / s))
            .collect();
        log_sum_exp(&terms)
    }

    /// `ln sf(x)`, accurate in the far upper tail.
    pub fn ln_sf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .components()
            .map(|(w, m, s)| w.ln() + crate::special::ln_norm_cdf((m - x) / s))
            .collect();
        log_sum_exp(&terms)
    }

    /// Raw moment `E[X^n]` for `n` in 1..=4.
    pub fn raw_moment(&self, order: u32) -> Result<f64> {
        let f: fn(f64, f64) -> f64 = match order {
            1 => |m, _| m,
            2 => |m, s| m * m + s * s,
            3 => |m, s| m * m * m + 3.0 * m * s * s,
            4 => |m, s| {
                let (m2, s2) = (m * m, s * s);
                m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2
            },
            _ => return Err(NesError::invalid(format!("moment order {order} unsupported (1..=4)"))),
        };
        Ok(self.components().map(|(w, m, s)| w * f(m, s)).sum())
    }

    /// Raw moments `M1..M4`.
    pub fn raw_moments(&self) -> [f64; 4] {
        [1, 2, 3, 4].map(|n| self.raw_moment(n).expect("orders 1..=4 are supported"))
    }

    /// Central moments of order 2, 3, 4 computed from component offsets
    /// about the mean (no cancellation between large raw moments).
    pub fn central_moments(&self) -> (f64, f64, f64, f64) {
        let mean: f64 = self.components().map(|(w, m, _)| w * m).sum();
        let (mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0);
        for (w, m, s) in self.components() {
            let d = m - mean;
            let (d2, s2) = (d * d, s * s);
            c2 += w * (d2 + s2);
            c3 += w * (d2 * d + 3.0 * d * s2);
            c4 += w * (d2 * d2 + 6.0 * d2 * s2 + 3.0 * s2 * s2);
        }
        (mean, c2, c3, c4)
    }

    /// Mean, variance, skewness and kurtosis.
    pub fn central_stats(&self) -> Result<CentralStats> {
        let (mean, var, c3, c4) = self.central_moments();
        if !(var > 0.0) {
            return Err(NesError::invalid("mixture variance is not positive"));
        }
        Ok(CentralStats {
            mean,
            variance: var,
            skewness: c3 / var.powf(1.5),
            kurtosis: c4 / (var * var),
        })
    }

    /// Returns the same mixture with every mean shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        GaussianMixture {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m + c).collect(),
            stdevs: self.stdevs.clone(),
        }
    }

    /// Interval `[min mean - k max sd, max mean + k max sd]` holding all mass.
    pub fn support(&self, k: f64) -> (f64, f64) {
        let smax = self.stdevs.iter().cloned().fold(0.0, f64::max);
        let lo = self.means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo - k * smax, hi + k * smax)
    }

    /// Draws one sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = self.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        self.means[idx] + self.stdevs[idx] * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{adaptive_simpson, integrate, QuadOptions};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn short_put_mixture() -> GaussianMixture {
        // stationary mixture of a short-dated put fit, built by hand
        let (mu, s1, s2, a) = (0.092_f64, 0.09_f64, 0.461_f64, 0.505_f64);
        let m3 = (mu * s2 * s2 - mu * s1 * s1) / (s1 * s1 + s2 * s2);
        let s3 = (2.0 * s1 * s1 * s2 * s2 / (s1 * s1 + s2 * s2)).sqrt();
        let w1 = (1.0 - a) * (1.0 - a) / s1;
        let w2 = a * a / s2;
        let w3 = 2.0 * a * (1.0 - a) / ((s1 * s1 + s2 * s2) / 2.0).sqrt()
            * (-(2.0 * mu).powi(2) / (2.0 * (s1 * s1 + s2 * s2))).exp();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        GaussianMixture::from_unnormalized(vec![w1, w2, w3], vec![mu, -mu, m3], vec![s1 * h, s2 * h, s3 * h]).unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        let m = GaussianMixture::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert!((m.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert_eq!(m.cdf(0.0), 0.5);
        assert_eq!(m.cdf(40.0), 1.0);
        assert_eq!(m.raw_moments(), [0.0, 1.0, 0.0, 3.0]);
        let st = m.central_stats().unwrap();
        assert_eq!((st.skewness, st.kurtosis), (0.0, 3.0));
    }

    #[test]
    fn point_mass_third_moment() {
        let m = GaussianMixture::new(vec![1.0], vec![2.0], vec![1e-8]).unwrap();
        assert!((m.raw_moment(3).unwrap() - 8.0).abs() < 1e-12);
        assert!(m.raw_moment(5).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(GaussianMixture::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn symmetric_mixture() {
        let m = GaussianMixture::new(vec![0.5, 0.5], vec![-0.3, 0.3], vec![0.2, 0.2]).unwrap();
        for i in 0..50 {
            let x = i as f64 * 0.03;
            assert!((m.pdf(x) - m.pdf(-x)).abs() < 1e-15);
        }
        let st = m.central_stats().unwrap();
        assert_eq!(st.mean, 0.0);
        assert_eq!(st.skewness, 0.0);
    }

    #[test]
    fn pdf_is_sum_of_normal_pdfs() {
        let m = short_put_mixture();
        for &x in &[-1.0, -0.2, 0.0, 0.05, 0.4] {
            let mut s = 0.0;
            for k in 0..3 {
                let (w, mu, sd) = (m.weights()[k], m.means()[k], m.stdevs()[k]);
                s += w * (-(x - mu) * (x - mu) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            }
            assert!(((m.pdf(x) - s) / s).abs() < 1e-14);
            assert!((m.ln_pdf(x) - s.ln()).abs() < 1e-13);
        }
    }

    #[test]
    fn cdf_matches_integrated_pdf() {
        let m = short_put_mixture();
        let (lo, _) = m.support(12.0);
        for &x in &[-0.8, -0.1, 0.0, 0.1, 0.6] {
            let q = adaptive_simpson(|y| m.pdf(y), lo, x, 1e-12);
            assert!((q - m.cdf(x)).abs() < 1e-9);
            assert!((m.sf(x) - (1.0 - m.cdf(x))).abs() < 1e-14);
        }
        assert!((m.ln_sf(5.0) - m.sf(5.0).ln()).abs() < 1e-10);
        assert!(m.ln_cdf(-30.0).is_finite());
    }

    #[test]
    fn moments_match_quadrature() {
        let m = short_put_mixture();
        let (lo, hi) = m.support(12.0);
        for n in 1..=4 {
            let q = integrate(|x| x.powi(n as i32) * m.pdf(x), lo, hi, &QuadOptions::rel(1e-13)).unwrap().value;
            let r = m.raw_moment(n).unwrap();
            assert!(((q - r) / r).abs() < 1e-8, "order {n}");
        }
    }

    #[test]
    fn moments_match_sampling() {
        let m = short_put_mixture();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        let mut s = [0.0; 4];
        for _ in 0..n {
            let x = m.sample(&mut rng);
            s[0] += x;
            s[1] += x * x;
            s[2] += x * x * x;
            s[3] += x * x * x * x;
        }
        let r = m.raw_moments();
        // second and fourth moments are dominated by positive terms
        assert!((s[1] / n as f64 - r[1]).abs() / r[1] < 0.01);
        assert!((s[3] / n as f64 - r[3]).abs() / r[3] < 0.03);
    }

    proptest! {
        #[test]
        fn affine_closure(c in -2.0f64..2.0, a in 0.0f64..1.0, s1 in 0.05f64..1.0, s2 in 0.05f64..1.0) {
            let m = GaussianMixture::new(vec![1.0 - a, a], vec![0.3, -0.2], vec![s1, s2]).unwrap();
            let b = m.central_stats().unwrap();
            let t = m.shifted(c).central_stats().unwrap();
            prop_assert!((t.mean - b.mean - c).abs() < 1e-12);
            prop_assert!((t.variance - b.variance).abs() < 1e-12 * b.variance);
            prop_assert!((t.skewness - b.skewness).abs() < 1e-9);
            prop_assert!((t.kurtosis - b.kurtosis).abs() < 1e-9);
        }

        #[test]
        fn normalization(a in 0.0f64..1.0, s1 in 0.02f64..1.0, s2 in 0.02f64..1.0, mu in 0.0f64..1.0) {
            let m = GaussianMixture::new(vec![1.0 - a, a], vec![mu, -mu], vec![s1, s2]).unwrap();
            let (lo, hi) = m.support(12.0);
            let q = integrate(|x| m.pdf(x), lo, hi, &QuadOptions::rel(1e-13)).unwrap().value;
            prop_assert!((q - 1.0).abs() < 1e-10);
        }

        #[test]
        fn cdf_monotone(x in -3.0f64..3.0, dx in 0.0f64..1.0) {
            let m = GaussianMixture::new(vec![0.3, 0.7], vec![0.4, -0.4], vec![0.2, 0.5]).unwrap();
            prop_assert!(m.cdf(x + dx) >= m.cdf(x));
        }
    }
}

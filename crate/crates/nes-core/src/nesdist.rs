//! Non-equilibrium return densities under the real and risk-neutral measures.
//!
//! Both are exponential tilts of the stationary mixture,
//! `p(y) ~ exp(b y) Psi0^2(y)` and `q(y) ~ exp(xi' y) Psi0^2(y)`, and so stay
//! three-component mixtures with shifted means `mu_k + tilt * sigma_hat_k^2`
//! and reweighted components, where `sigma_hat_k^2 = sigma_k^2 / 2`.

use crate::error::{NesError, Result};
use crate::gaussmix::GaussianMixture;
use crate::passage::escape_rate_of;
use crate::potential::{stationary_density, NesParams, Potential, StationaryDensity};
use crate::pricing::MarketEnv;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Real,
    RiskNeutral,
}

/// How the relaxation rate `lambda` entering `b_t` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RateSpec {
    /// A given rate.
    Fixed(f64),
    /// Inverse exact mean passage time from `y0`; the absorbing point is the
    /// global minimum of a double well unless a threshold is given.
    Passage { threshold: Option<f64> },
}

impl Default for RateSpec {
    fn default() -> Self {
        RateSpec::Passage { threshold: None }
    }
}

/// A tilted stationary density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDensity {
    pub kind: MeasureKind,
    /// Means `mu_k^(m) T`, stdevs `sigma_hat_k sqrt(T)`.
    pub mixture: GaussianMixture,
    /// `b_T` for the real measure, `xi'` for the risk-neutral one.
    pub tilt: f64,
    pub base: NesParams,
    /// Per-unit-horizon tilted locations `mu_k + tilt * sigma_hat_k^2`.
    pub mu: [f64; 3],
    /// `sigma_hat_k^2 = sigma_k^2 / 2`.
    pub sigma_hat_sq: [f64; 3],
}

impl MeasureDensity {
    pub fn weights(&self) -> [f64; 3] {
        let w = self.mixture.weights();
        [w[0], w[1], w[2]]
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.mixture.pdf(y)
    }
}

fn sigma_hat_sq(sd: &StationaryDensity) -> [f64; 3] {
    sd.sigma.map(|s| 0.5 * s * s)
}

/// Log of the unnormalized tilted weights `omega_k exp(x (mu_k + x sigma_hat_k^2 / 2) T)`.
fn tilted_log_weights(sd: &StationaryDensity, x: f64, t: f64) -> [f64; 3] {
    let s2 = sigma_hat_sq(sd);
    std::array::from_fn(|k| sd.omega[k].ln() + x * (sd.mu[k] + 0.5 * x * s2[k]) * t)
}

fn normalize_log(lw: &[f64; 3]) -> [f64; 3] {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = lw.map(|l| (l - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn tilted(params: &NesParams, x: f64, kind: MeasureKind) -> Result<MeasureDensity> {
    let sd = stationary_density(params)?;
    let t = params.t;
    let s2 = sigma_hat_sq(&sd);
    let w = normalize_log(&tilted_log_weights(&sd, x, t));
    let mu: [f64; 3] = std::array::from_fn(|k| sd.mu[k] + x * s2[k]);
    let mixture = GaussianMixture::from_unnormalized(
        w.to_vec(),
        mu.iter().map(|m| m * t).collect(),
        s2.iter().map(|v| (v * t).sqrt()).collect(),
    )?;
    Ok(MeasureDensity { kind, mixture, tilt: x, base: *params, mu, sigma_hat_sq: s2 })
}

/// Mean and variance `(y_M, sigma_M^2)` of the stationary mixture.
pub fn stationary_mean_var(params: &NesParams) -> Result<(f64, f64)> {
    let sd = stationary_density(params)?;
    let (mean, var, _, _) = sd.mixture.central_moments();
    Ok((mean, var))
}

/// Relaxation rate for the given specification.
pub fn relaxation_rate(params: &NesParams, y0: f64, rate: RateSpec) -> Result<f64> {
    match rate {
        RateSpec::Fixed(l) if l >= 0.0 => Ok(l),
        RateSpec::Fixed(l) => Err(NesError::invalid(format!("rate {l} must be nonnegative"))),
        RateSpec::Passage { threshold } => {
            let pot = Potential::new(params)?;
            Ok(escape_rate_of(&pot, y0, threshold)?.lambda)
        }
    }
}

/// Non-equilibrium tilt `b_t = ((y0 - y_M) / sigma_M^2) exp(-lambda t)`.
pub fn tilt_b(params: &NesParams, y0: f64, t: f64, rate: RateSpec) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(NesError::invalid("t must be nonnegative"));
    }
    if !y0.is_finite() {
        return Err(NesError::invalid("y0 must be finite"));
    }
    let (mean, var) = stationary_mean_var(params)?;
    let b0 = (y0 - mean) / var;
    if t == 0.0 || b0 == 0.0 {
        return Ok(b0);
    }
    let lambda = relaxation_rate(params, y0, rate)?;
    Ok(if lambda.is_infinite() { 0.0 } else { b0 * (-lambda * t).exp() })
}

/// Real-measure density of `y_T` given `y0`, with `T = params.t`.
pub fn real_density(params: &NesParams, y0: f64, rate: RateSpec) -> Result<MeasureDensity> {
    let b = tilt_b(params, y0, params.t, rate)?;
    real_density_with_tilt(params, b)
}

/// Real-measure density for a given tilt `b`.
pub fn real_density_with_tilt(params: &NesParams, b: f64) -> Result<MeasureDensity> {
    if !b.is_finite() {
        return Err(NesError::invalid("tilt must be finite"));
    }
    tilted(params, b, MeasureKind::Real)
}

/// Outcome of the `xi'` solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiSolution {
    pub xi_prime: f64,
    /// `sum_k omega_k^(q) mu_k^(q) - (r_f - q - h^2/2)`.
    pub residual: f64,
    pub iterations: usize,
}

/// Target drift `r_f - q - h^2 / 2`.
pub fn target_drift(params: &NesParams, market: &MarketEnv) -> f64 {
    market.r_f - market.q_div - 0.5 * params.h * params.h
}

/// Constraint residual and its derivative in `xi'`.
fn residual_and_slope(sd: &StationaryDensity, x: f64, t: f64, drift: f64) -> (f64, f64) {
    let s2 = sigma_hat_sq(sd);
    let w = normalize_log(&tilted_log_weights(sd, x, t));
    let mu: [f64; 3] = std::array::from_fn(|k| sd.mu[k] + x * s2[k]);
    let mean: f64 = (0..3).map(|k| w[k] * mu[k]).sum();
    let var_mu: f64 = (0..3).map(|k| w[k] * (mu[k] - mean).powi(2)).sum();
    let avg_s2: f64 = (0..3).map(|k| w[k] * s2[k]).sum();
    (mean - drift, avg_s2 + t * var_mu)
}

/// The convex objective `L'(xi') = ln sum_k omega_k exp(xi'(mu_k + xi' sigma_hat_k^2/2) T) - xi' D T`.
pub fn xi_objective(params: &NesParams, market: &MarketEnv, x: f64) -> Result<f64> {
    let sd = stationary_density(params)?;
    let lw = tilted_log_weights(&sd, x, params.t);
    Ok(crate::special::log_sum_exp(&lw) - x * target_drift(params, market) * params.t)
}

const MAX_ITER: usize = 200;

/// Solves the risk-neutral drift constraint for `xi'` by safeguarded Newton.
///
/// The residual is strictly increasing in `xi'` (its slope is the variance of
/// `y_T` over `T`), so a bracket is grown until it changes sign and Newton
/// steps falling outside the bracket are replaced by bisection. If the bracket
/// cannot be found the fixed-point iteration is tried.
pub fn solve_xi_prime(params: &NesParams, market: &MarketEnv) -> Result<XiSolution> {
    market.validate()?;
    let sd = stationary_density(params)?;
    let (t, drift) = (params.t, target_drift(params, market));
    let f = |x: f64| residual_and_slope(&sd, x, t, drift);
    let x0 = small_t_limit(&sd, drift);
    let (r0, _) = f(x0);
    if r0 == 0.0 {
        return Ok(XiSolution { xi_prime: x0, residual: 0.0, iterations: 0 });
    }
    // grow a bracket in the downhill direction
    let dir = if r0 > 0.0 { -1.0 } else { 1.0 };
    let mut step = 1.0_f64.max(x0.abs());
    let (mut lo, mut hi) = (x0, x0);
    let mut found = false;
    for _ in 0..200 {
        let x = x0 + dir * step;
        let (r, _) = f(x);
        if !r.is_finite() {
            break;
        }
        if (r > 0.0) != (r0 > 0.0) || r == 0.0 {
            if dir > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            found = true;
            break;
        }
        if dir > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        step *= 2.0;
    }
    if !found {
        return solve_xi_prime_fixed_point(params, market, MAX_ITER);
    }
    let mut x = 0.5 * (lo + hi);
    let mut best = (f64::INFINITY, x);
    for it in 1..=MAX_ITER {
        let (r, s) = f(x);
        if r.abs() < best.0 {
            best = (r.abs(), x);
        }
        if r == 0.0 || (r.abs() < 1e-15 && it > 1) {
            return Ok(XiSolution { xi_prime: x, residual: r, iterations: it });
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - r / s;
        let next = if newton > lo && newton < hi && s > 0.0 { newton } else { 0.5 * (lo + hi) };
        if next == x || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            let (rb, _) = f(best.1);
            return Ok(XiSolution { xi_prime: best.1, residual: rb, iterations: it });
        }
        x = next;
    }
    let (rb, _) = f(best.1);
    if rb.abs() < 1e-12 {
        return Ok(XiSolution { xi_prime: best.1, residual: rb, iterations: MAX_ITER });
    }
    Err(NesError::NonConvergence { what: "xi' Newton solve".into(), iterations: MAX_ITER, achieved: rb.abs() })
}

fn small_t_limit(sd: &StationaryDensity, drift: f64) -> f64 {
    let s2 = sigma_hat_sq(sd);
    let num: f64 = (0..3).map(|k| sd.omega[k] * (drift - sd.mu[k])).sum();
    let den: f64 = (0..3).map(|k| sd.omega[k] * s2[k]).sum();
    num / den
}

/// The `T -> 0` limit `sum_k omega_k (D - mu_k) / sum_k omega_k sigma_hat_k^2`.
pub fn xi_prime_small_t_limit(params: &NesParams, market: &MarketEnv) -> Result<f64> {
    let sd = stationary_density(params)?;
    Ok(small_t_limit(&sd, target_drift(params, market)))
}

/// Solves for `xi'` by iterating
/// `xi' = sum_k omega_k (D - mu_k) e_k / sum_k omega_k sigma_hat_k^2 e_k`
/// with `e_k = exp(xi' T (mu_k + xi' sigma_hat_k^2 / 2))`.
pub fn solve_xi_prime_fixed_point(params: &NesParams, market: &MarketEnv, max_iter: usize) -> Result<XiSolution> {
    solve_xi_prime_fixed_point_damped(params, market, 1.0, max_iter)
}

/// The fixed-point iteration relaxed as `xi' <- (1 - w) xi' + w F(xi')`.
///
/// A damping `w < 1` restores contraction where the plain map overshoots.
pub fn solve_xi_prime_fixed_point_damped(params: &NesParams, market: &MarketEnv, damping: f64, max_iter: usize) -> Result<XiSolution> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(NesError::invalid(format!("damping must lie in (0, 1], got {damping}")));
    }
    market.validate()?;
    let sd = stationary_density(params)?;
    let (t, drift) = (params.t, target_drift(params, market));
    let s2 = sigma_hat_sq(&sd);
    let mut x = small_t_limit(&sd, drift);
    for it in 1..=max_iter {
        let w = normalize_log(&tilted_log_weights(&sd, x, t));
        let num: f64 = (0..3).map(|k| w[k] * (drift - sd.mu[k])).sum();
        let den: f64 = (0..3).map(|k| w[k] * s2[k]).sum();
        let next = (1.0 - damping) * x + damping * num / den;
        if !next.is_finite() {
            break;
        }
        if (next - x).abs() <= 1e-14 * next.abs().max(1.0) {
            let (r, _) = residual_and_slope(&sd, next, t, drift);
            return Ok(XiSolution { xi_prime: next, residual: r, iterations: it });
        }
        x = next;
    }
    let (r, _) = residual_and_slope(&sd, x, t, drift);
    Err(NesError::NonConvergence { what: "xi' fixed-point iteration".into(), iterations: max_iter, achieved: r.abs() })
}

/// Risk-neutral density of `y_T`. It depends on the market only, not on `y0`.
pub fn risk_neutral_density(params: &NesParams, market: &MarketEnv) -> Result<MeasureDensity> {
    let s = solve_xi_prime(params, market)?;
    risk_neutral_density_with_xi(params, s.xi_prime)
}

/// Risk-neutral density for a given `xi'`.
pub fn risk_neutral_density_with_xi(params: &NesParams, xi_prime: f64) -> Result<MeasureDensity> {
    if !xi_prime.is_finite() {
        return Err(NesError::invalid("xi' must be finite"));
    }
    tilted(params, xi_prime, MeasureKind::RiskNeutral)
}

/// `E_q[exp(y_T)] - exp((r_f - q) T)`: how far the drift constraint leaves the
/// discounted price from a martingale.
pub fn forward_discrepancy(q: &MeasureDensity, market: &MarketEnv) -> f64 {
    let t = q.base.t;
    let w = q.weights();
    let e: f64 = (0..3).map(|k| w[k] * ((q.mu[k] + 0.5 * q.sigma_hat_sq[k]) * t).exp()).sum();
    e - ((market.r_f - market.q_div) * t).exp()
}

/// First-order time-dependent moments about the stationary mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMoments {
    pub b: f64,
    pub mean: f64,
    /// `E[(y_t - y_M)^2]`.
    pub second: f64,
    /// `E[(y_t - y_M)^3]`.
    pub third: f64,
    /// Set when `|b| sigma_M` is not small.
    pub warning: Option<&'static str>,
}

/// Moments of the linear-factor density `Psi0^2 [1 + b_t (y - y_M)]`:
/// mean `y_M + b sigma_M^2`, second `sigma_M^2 + b M3`, third `M3 + b M4`.
pub fn time_dependent_moments(params: &NesParams, y0: f64, t: f64, rate: RateSpec) -> Result<TimeMoments> {
    let b = tilt_b(params, y0, t, rate)?;
    moments_for_tilt(params, b)
}

/// Moments for a given `b`.
pub fn moments_for_tilt(params: &NesParams, b: f64) -> Result<TimeMoments> {
    let sd = stationary_density(params)?;
    let (mean, c2, c3, c4) = sd.mixture.central_moments();
    let warning = if b.abs() * c2.sqrt() > 0.5 { Some("|b| sigma_M exceeds 0.5; first-order moments unreliable") } else { None };
    Ok(TimeMoments { b, mean: mean + b * c2, second: c2 + b * c3, third: c3 + b * c4, warning })
}

/// Density `Psi0^2(y) [1 + b (y - y_M)]`; it can go negative far in the tail.
pub fn linear_factor_pdf(params: &NesParams, b: f64, y: f64) -> Result<f64> {
    let sd = stationary_density(params)?;
    let (mean, _, _, _) = sd.mixture.central_moments();
    Ok(sd.mixture.pdf(y) * (1.0 + b * (y - mean)))
}

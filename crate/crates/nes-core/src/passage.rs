//! Mean first-passage times and Kramers escape rates.
//!
//! The exact passage time solves the backward equation with a reflecting
//! boundary at infinity and an absorbing point `y_abs`:
//! `T(y0) = (2/h^2) int_{y_abs}^{y0} dy Psi0(y)^-2 int_y^inf Psi0(z)^2 dz`.
//! The inner integral is the survival function of the stationary mixture.
//! The integrand spans hundreds of orders of magnitude, so it is evaluated
//! in log space relative to its maximum.

use crate::error::{NesError, Result};
use crate::potential::{NesParams, Potential, Shape};
use crate::quad::{integrate_with_breaks, QuadOptions};
use crate::special::norm_cdf;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EscapeMethod {
    Quadrature,
    SaddlePoint,
}

/// A mean passage time and the corresponding escape rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeResult {
    pub mean_passage_time: f64,
    pub lambda: f64,
    pub method: EscapeMethod,
    pub y0: f64,
    /// Absorbing point used.
    pub y_abs: f64,
    /// Barrier height `V(y_m) - V(y*)` (saddle point only).
    pub barrier: Option<f64>,
    /// Classical Kramers time without the mass correction (saddle point only).
    pub kramers_time: Option<f64>,
}

const QUAD_REL_TOL: f64 = 1e-8;

fn result(t: f64, method: EscapeMethod, y0: f64, y_abs: f64) -> EscapeResult {
    EscapeResult {
        mean_passage_time: t,
        lambda: 1.0 / t,
        method,
        y0,
        y_abs,
        barrier: None,
        kramers_time: None,
    }
}

/// Exact mean passage time from `y0` down to `y_star < y0`.
pub fn passage_time_quadrature(params: &NesParams, y0: f64, y_star: f64) -> Result<EscapeResult> {
    if !(y0.is_finite() && y_star.is_finite()) {
        return Err(NesError::invalid("y0 and y_star must be finite"));
    }
    if y0 <= y_star {
        return Err(NesError::invalid(format!("y0 = {y0} must exceed the absorbing point {y_star}")));
    }
    let pot = Potential::new(params)?;
    mean_exit_time(&pot, y0, y_star)
}

/// Exact mean passage time from `y0` to the absorbing point `y_abs` on either side.
///
/// When `y_abs > y0` the mirrored formula with the lower-tail mass
/// `int_{-inf}^y Psi0^2` is used.
pub fn mean_exit_time(pot: &Potential, y0: f64, y_abs: f64) -> Result<EscapeResult> {
    if !(y0.is_finite() && y_abs.is_finite()) {
        return Err(NesError::invalid("y0 and the absorbing point must be finite"));
    }
    let h2 = pot.params().h * pot.params().h;
    if y0 == y_abs {
        return Ok(result(0.0, EscapeMethod::Quadrature, y0, y_abs));
    }
    let g = pot.ground();
    let mix = &pot.stationary().mixture;
    let upward = y_abs > y0;
    let log_f = |y: f64| {
        let inner = if upward { mix.ln_cdf(y) } else { mix.ln_sf(y) };
        inner - 2.0 * g.ln_psi(y)
    };
    let (lo, hi) = if upward { (y0, y_abs) } else { (y_abs, y0) };
    // break points: interval ends, the barrier if inside, and a coarse grid
    let mut pts = vec![lo];
    if let Shape::DoubleWell { barrier, .. } = pot.shape() {
        if barrier > lo && barrier < hi {
            pts.push(barrier);
        }
    }
    pts.push(hi);
    let n_scan = 64;
    let mut fmax = f64::NEG_INFINITY;
    for i in 0..=n_scan {
        let y = lo + (hi - lo) * i as f64 / n_scan as f64;
        fmax = fmax.max(log_f(y));
    }
    for &p in &pts {
        fmax = fmax.max(log_f(p));
    }
    let opts = QuadOptions { abs_tol: 0.0, rel_tol: QUAD_REL_TOL * 0.1, max_subdivisions: 4000 };
    let r = integrate_with_breaks(|y| (log_f(y) - fmax).exp(), &pts, &opts)?;
    let t = 2.0 / h2 * r.value * fmax.exp();
    if !(t.is_finite() && t >= 0.0) {
        return Err(NesError::NonConvergence {
            what: "passage-time quadrature".into(),
            iterations: r.n_evals,
            achieved: r.abs_err,
        });
    }
    Ok(result(t, EscapeMethod::Quadrature, y0, y_abs))
}

/// Saddle-point mean passage time out of the metastable well.
///
/// `T = 2 pi / sqrt(V''(y*) |V''(y_m)|) exp(2 dV / h^2) * S`, where `S` is the
/// stationary mass on the metastable side of the barrier smoothed by the
/// barrier width `sigma_m^2 = h^2 / (2 |V''(y_m)|)`.
pub fn passage_time_saddle(params: &NesParams) -> Result<EscapeResult> {
    let pot = Potential::new(params)?;
    saddle_of(&pot)
}

pub(crate) fn saddle_of(pot: &Potential) -> Result<EscapeResult> {
    let (y_loc, y_m) = pot
        .local_min_and_barrier()
        .ok_or_else(|| NesError::SaddleInapplicable("the potential has a single well".into()))?;
    let p = pot.params();
    let h2 = p.h * p.h;
    let v2_loc = pot.derivs(y_loc).v2;
    let v2_m = pot.derivs(y_m).v2.abs();
    if !(v2_loc > 0.0 && v2_m > 0.0) {
        return Err(NesError::SaddleInapplicable("degenerate curvature at a critical point".into()));
    }
    let g = pot.ground();
    // 2 dV / h^2 = 2 ln(Psi0(y*) / Psi0(y_m)), independent of h
    let two_dv_h2 = 2.0 * (g.ln_psi(y_loc) - g.ln_psi(y_m));
    let kramers = 2.0 * PI / (v2_loc * v2_m).sqrt() * two_dv_h2.exp();
    let sigma_m2 = h2 / (2.0 * v2_m);
    let sd = pot.stationary();
    let sign = if y_loc > y_m { 1.0 } else { -1.0 };
    let mass: f64 = (0..3)
        .map(|k| {
            let s = (sd.sigma[k] * sd.sigma[k] * p.t + 2.0 * sigma_m2).sqrt();
            sd.omega[k] * norm_cdf(sign * 2f64.sqrt() * (sd.mu[k] * p.t - y_m) / s)
        })
        .sum();
    let t = kramers * mass;
    let global = pot.global_min();
    Ok(EscapeResult {
        mean_passage_time: t,
        lambda: 1.0 / t,
        method: EscapeMethod::SaddlePoint,
        y0: y_loc,
        y_abs: global,
        barrier: Some(0.5 * h2 * two_dv_h2),
        kramers_time: Some(kramers),
    })
}

/// Escape rate from `y0`: the inverse exact mean passage time to the global
/// minimum of a double well, or to `threshold` when given.
pub fn escape_rate(params: &NesParams, y0: f64, threshold: Option<f64>) -> Result<EscapeResult> {
    let pot = Potential::new(params)?;
    escape_rate_of(&pot, y0, threshold)
}

pub(crate) fn escape_rate_of(pot: &Potential, y0: f64, threshold: Option<f64>) -> Result<EscapeResult> {
    let y_abs = match (threshold, pot.shape()) {
        (Some(t), _) => t,
        (None, Shape::DoubleWell { .. }) => pot.global_min(),
        (None, Shape::SingleWell { .. }) => return Err(NesError::ThresholdRequired),
    };
    mean_exit_time(pot, y0, y_abs)
}

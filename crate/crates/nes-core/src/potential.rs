//! Ground state, stationary density and the implied Langevin potential.
//!
//! The ground state is a two-component Gaussian mixture
//! `Psi0(y) = C [(1-a) phi(y | mu1 T, sigma1^2 T) + a phi(y | mu2 T, sigma2^2 T)]`
//! whose square is the stationary density. The potential follows as
//! `V = -h^2 ln Psi0 + V0` with the gauge `min V = 0`.

use crate::error::{NesError, Result};
use crate::gaussmix::GaussianMixture;
use crate::special::log_add_exp;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NesParams {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub a: f64,
    pub h: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

impl NesParams {
    /// Builds and validates a parameter set.
    pub fn new(mu1: f64, mu2: f64, sigma1: f64, sigma2: f64, a: f64, h: f64, t: f64) -> Result<Self> {
        let p = NesParams { mu1, mu2, sigma1, sigma2, a, h, t };
        p.validate()?;
        Ok(p)
    }

    /// The single-mu convention `mu1 = mu`, `mu2 = -mu`.
    pub fn symmetric(mu: f64, sigma1: f64, sigma2: f64, a: f64, h: f64, t: f64) -> Result<Self> {
        Self::new(mu, -mu, sigma1, sigma2, a, h, t)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mu1, self.mu2, self.sigma1, self.sigma2, self.a, self.h, self.t];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(NesError::invalid("parameters must be finite"));
        }
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(NesError::invalid("sigma1 and sigma2 must be positive"));
        }
        if !(self.h > 0.0) {
            return Err(NesError::invalid("h must be positive"));
        }
        if !(self.t > 0.0) {
            return Err(NesError::invalid("T must be positive"));
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(NesError::invalid("a must lie in [0, 1]"));
        }
        if self.mu2 > self.mu1 {
            return Err(NesError::invalid("mu2 must not exceed mu1"));
        }
        Ok(())
    }

    /// Copy with a different horizon.
    pub fn with_t(&self, t: f64) -> Self {
        NesParams { t, ..*self }
    }

    /// Copy with a different noise volatility.
    pub fn with_h(&self, h: f64) -> Self {
        NesParams { h, ..*self }
    }
}

/// The three-component stationary mixture `Psi0^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDensity {
    /// Means `mu_k T`, stdevs `sigma_k sqrt(T/2)`.
    pub mixture: GaussianMixture,
    pub omega: [f64; 3],
    /// Normalization sum `Omega`.
    pub omega_norm: f64,
    /// Squared ground-state normalization `C^2 = 2 sqrt(pi T) / Omega`.
    pub c2: f64,
    /// Per-unit-horizon locations `mu_k` (k = 1, 2, 3).
    pub mu: [f64; 3],
    /// Per-unit-horizon volatilities `sigma_k`, with
    /// `sigma3^2 = 2 sigma1^2 sigma2^2 / (sigma1^2 + sigma2^2)`.
    pub sigma: [f64; 3],
}

impl StationaryDensity {
    pub fn mu3(&self) -> f64 {
        self.mu[2]
    }
    pub fn sigma3(&self) -> f64 {
        self.sigma[2]
    }
}

/// Builds the stationary density from the parameters.
pub fn stationary_density(p: &NesParams) -> Result<StationaryDensity> {
    p.validate()?;
    let (s1, s2, a, t) = (p.sigma1, p.sigma2, p.a, p.t);
    let ssum = s1 * s1 + s2 * s2;
    let mu3 = (p.mu1 * s2 * s2 + p.mu2 * s1 * s1) / ssum;
    let sigma3 = (2.0 * s1 * s1 * s2 * s2 / ssum).sqrt();
    let dm = p.mu1 - p.mu2;
    let u1 = (1.0 - a) * (1.0 - a) / s1;
    let u2 = a * a / s2;
    let u3 = 2.0 * a * (1.0 - a) / (ssum / 2.0).sqrt() * (-dm * dm * t / (2.0 * ssum)).exp();
    let omega_norm = u1 + u2 + u3;
    let w1 = u1 / omega_norm;
    let w2 = u2 / omega_norm;
    // third weight closes the sum exactly
    let w3 = (1.0 - w1 - w2).max(0.0);
    let omega = [w1, w2, w3];
    let mu = [p.mu1, p.mu2, mu3];
    let sigma = [s1, s2, sigma3];
    let half_t = (t / 2.0).sqrt();
    let mixture = GaussianMixture::new(
        omega.to_vec(),
        mu.iter().map(|m| m * t).collect(),
        sigma.iter().map(|s| s * half_t).collect(),
    )?;
    Ok(StationaryDensity {
        mixture,
        omega,
        omega_norm,
        c2: 2.0 * (PI * t).sqrt() / omega_norm,
        mu,
        sigma,
    })
}

/// Evaluator for `ln Psi0` and its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundState {
    params: NesParams,
    ln_c: f64,
    // per component: ln weight - ln(s sqrt(2 pi)), mean, variance
    lw: [f64; 2],
    m: [f64; 2],
    var: [f64; 2],
}

/// Value and derivatives of `ln Psi0` at a point, plus component responsibilities.
#[derive(Debug, Clone, Copy)]
pub struct LogPsi {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl GroundState {
    pub fn new(p: &NesParams, sd: &StationaryDensity) -> Self {
        let t = p.t;
        let var = [p.sigma1 * p.sigma1 * t, p.sigma2 * p.sigma2 * t];
        let lw = [
            (1.0 - p.a).ln() - 0.5 * (2.0 * PI * var[0]).ln(),
            p.a.ln() - 0.5 * (2.0 * PI * var[1]).ln(),
        ];
        GroundState {
            params: *p,
            ln_c: 0.5 * sd.c2.ln(),
            lw,
            m: [p.mu1 * t, p.mu2 * t],
            var,
        }
    }

    pub fn params(&self) -> &NesParams {
        &self.params
    }

    /// ln of the normalization constant `C`.
    pub fn ln_c(&self) -> f64 {
        self.ln_c
    }

    /// Log of the (unnormalized) component `k` of the mixture at `y`,
    /// i.e. `ln(w_k phi(y | m_k, v_k))`.
    pub fn ln_component(&self, k: usize, y: f64) -> f64 {
        let d = y - self.m[k];
        self.lw[k] - 0.5 * d * d / self.var[k]
    }

    /// Per-component log weight, mean and variance.
    pub(crate) fn components(&self) -> ([f64; 2], [f64; 2], [f64; 2]) {
        (self.lw, self.m, self.var)
    }

    /// `ln Psi0(y)`.
    ///
    /// Written as the dominant component plus `ln(1 + exp(other - dominant))`,
    /// so it never overflows however far `y` is in the tails.
    pub fn ln_psi(&self, y: f64) -> f64 {
        self.ln_c + log_add_exp(self.ln_component(0, y), self.ln_component(1, y))
    }

    /// `Psi0(y)`.
    pub fn psi(&self, y: f64) -> f64 {
        self.ln_psi(y).exp()
    }

    /// `ln Psi0` with analytic first and second derivatives.
    pub fn ln_psi_derivs(&self, y: f64) -> LogPsi {
        let l0 = self.ln_component(0, y);
        let l1 = self.ln_component(1, y);
        let lse = log_add_exp(l0, l1);
        let r = [(l0 - lse).exp(), (l1 - lse).exp()];
        let u = [-(y - self.m[0]) / self.var[0], -(y - self.m[1]) / self.var[1]];
        let mean_u = r[0] * u[0] + r[1] * u[1];
        // second derivative of a log-sum-exp: E_r[l''] + Var_r[l']
        let du = u[0] - u[1];
        let var_u = r[0] * r[1] * du * du;
        let d2 = -(r[0] / self.var[0] + r[1] / self.var[1]) + var_u;
        LogPsi { value: self.ln_c + lse, d1: mean_u, d2 }
    }
}

/// Type of a critical point of the potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub y: f64,
    pub kind: CriticalKind,
}

/// Well structure of the potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    SingleWell { min: f64 },
    DoubleWell { left: f64, barrier: f64, right: f64 },
}

impl Shape {
    pub fn is_double(&self) -> bool {
        matches!(self, Shape::DoubleWell { .. })
    }
}

const SCAN_POINTS: usize = 2001;
const LOCAL_POINTS: usize = 480;

/// The implied Langevin potential `V(y) = -h^2 ln Psi0(y) + V0`.
#[derive(Debug, Clone)]
pub struct Potential {
    params: NesParams,
    stationary: StationaryDensity,
    ground: GroundState,
    v0: f64,
    critical: Vec<CriticalPoint>,
    shape: Shape,
}

/// Potential value and analytic derivatives.
#[derive(Debug, Clone, Copy)]
pub struct PotentialDerivs {
    pub v1: f64,
    pub v2: f64,
}

impl Potential {
    pub fn new(p: &NesParams) -> Result<Self> {
        let stationary = stationary_density(p)?;
        let ground = GroundState::new(p, &stationary);
        let critical = find_critical_points_of(&ground)?;
        let shape = match critical.as_slice() {
            [c] => Shape::SingleWell { min: c.y },
            [l, b, r] => Shape::DoubleWell { left: l.y, barrier: b.y, right: r.y },
            _ => {
                return Err(NesError::RootBracketing {
                    resolution: SCAN_POINTS,
                    detail: format!("found {} critical points", critical.len()),
                })
            }
        };
        let v0 = critical
            .iter()
            .filter(|c| c.kind == CriticalKind::Min)
            .map(|c| ground.ln_psi(c.y))
            .fold(f64::NEG_INFINITY, f64::max)
            * p.h
            * p.h;
        Ok(Potential { params: *p, stationary, ground, v0, critical, shape })
    }

    pub fn params(&self) -> &NesParams {
        &self.params
    }
    pub fn stationary(&self) -> &StationaryDensity {
        &self.stationary
    }
    pub fn ground(&self) -> &GroundState {
        &self.ground
    }
    pub fn v0(&self) -> f64 {
        self.v0
    }
    pub fn critical_points(&self) -> &[CriticalPoint] {
        &self.critical
    }
    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `V(y)`, zero at the global minimum.
    pub fn value(&self, y: f64) -> f64 {
        let h2 = self.params.h * self.params.h;
        -h2 * self.ground.ln_psi(y) + self.v0
    }

    /// Analytic `V'(y)` and `V''(y)`.
    pub fn derivs(&self, y: f64) -> PotentialDerivs {
        let h2 = self.params.h * self.params.h;
        let l = self.ground.ln_psi_derivs(y);
        PotentialDerivs { v1: -h2 * l.d1, v2: -h2 * l.d2 }
    }

    /// Drift gradient `V'(y)`.
    pub fn v1(&self, y: f64) -> f64 {
        -self.params.h * self.params.h * self.ground.ln_psi_derivs(y).d1
    }

    /// Superpotential `W = V'/sqrt(2)`.
    pub fn superpotential(&self, y: f64) -> f64 {
        self.v1(y) * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Location of the global minimum.
    pub fn global_min(&self) -> f64 {
        match self.shape {
            Shape::SingleWell { min } => min,
            Shape::DoubleWell { left, right, .. } => {
                if self.value(left) <= self.value(right) {
                    left
                } else {
                    right
                }
            }
        }
    }

    /// For a double well, the metastable (higher) minimum and the barrier.
    pub fn local_min_and_barrier(&self) -> Option<(f64, f64)> {
        match self.shape {
            Shape::SingleWell { .. } => None,
            Shape::DoubleWell { left, barrier, right } => {
                let g = self.global_min();
                Some((if g == left { right } else { left }, barrier))
            }
        }
    }
}

fn find_critical_points_of(g: &GroundState) -> Result<Vec<CriticalPoint>> {
    let p = g.params();
    let (t, st) = (p.t, p.t.sqrt());
    let lo = p.mu2 * t - 10.0 * p.sigma2 * st;
    let hi = p.mu1 * t + 10.0 * p.sigma1 * st;
    // sign of V' equals the sign of -(ln Psi0)'
    let f = |y: f64| -g.ln_psi_derivs(y).d1;
    let n = SCAN_POINTS;
    let step = (hi - lo) / (n - 1) as f64;
    // uniform scan plus a dense local grid around each component, so that
    // narrow wells are resolved whatever their width relative to the range
    let mut grid: Vec<f64> = (0..n).map(|i| if i == n - 1 { hi } else { lo + i as f64 * step }).collect();
    for (m, v) in g.m.iter().zip(&g.var) {
        let s = v.sqrt();
        grid.extend((0..=LOCAL_POINTS).map(|j| m + s * (-12.0 + 24.0 * j as f64 / LOCAL_POINTS as f64)));
    }
    grid.retain(|y| *y >= lo && *y <= hi);
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let mut roots = Vec::new();
    let mut y_prev = grid[0];
    let mut f_prev = f(y_prev);
    if f_prev == 0.0 {
        roots.push(y_prev);
    }
    for &y in &grid[1..] {
        let fy = f(y);
        if fy == 0.0 {
            roots.push(y);
        } else if f_prev != 0.0 && (f_prev < 0.0) != (fy < 0.0) {
            roots.push(bisect(&f, y_prev, y, f_prev));
        }
        y_prev = y;
        f_prev = fy;
    }
    if roots.is_empty() {
        return Err(NesError::RootBracketing {
            resolution: n,
            detail: "no sign change of V' on the scan interval".into(),
        });
    }
    let pts = roots
        .into_iter()
        .map(|y| {
            let d2 = -g.ln_psi_derivs(y).d2;
            let kind = if d2 > 0.0 {
                CriticalKind::Min
            } else if d2 < 0.0 {
                CriticalKind::Max
            } else {
                // degenerate: classify by the slope just to the right
                if f(y + 1e-6) > 0.0 {
                    CriticalKind::Min
                } else {
                    CriticalKind::Max
                }
            };
            CriticalPoint { y, kind }
        })
        .collect::<Vec<_>>();
    let ok = match pts.len() {
        1 => pts[0].kind == CriticalKind::Min,
        3 => {
            pts[0].kind == CriticalKind::Min && pts[1].kind == CriticalKind::Max && pts[2].kind == CriticalKind::Min
        }
        _ => false,
    };
    if !ok {
        return Err(NesError::RootBracketing {
            resolution: n,
            detail: format!("unexpected critical point pattern {:?}", pts),
        });
    }
    Ok(pts)
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

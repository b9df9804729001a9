//! Calibration of `(mu, sigma1, sigma2, a, h)` to option quotes.
//!
//! The loss is the delta-weighted mean squared pricing error plus a penalty on
//! the risk-neutral drift constraint. It is minimized by seeded Latin-hypercube
//! multi-start with a bounded Nelder-Mead refinement per start.

use crate::error::{NesError, Result};
use crate::potential::{CriticalPoint, NesParams, Potential, Shape};
use crate::pricing::{bs_delta_from_implied, implied_vol, MarketEnv, NesPricer, OptionKind, OptionQuote};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Box bounds for `(mu, sigma1, sigma2, a, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: [f64; 5],
    pub upper: [f64; 5],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { lower: [0.0, 0.01, 0.01, 0.0, 0.01], upper: [1.0, 2.0, 2.0, 1.0, 2.0] }
    }
}

impl Bounds {
    fn clamp(&self, x: &mut [f64; 5]) {
        for i in 0..5 {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64; 5]) -> bool {
        (0..5).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    /// Penalty weight on the drift constraint; `None` means `1e3 * (mean quote)^2`.
    pub reg_lambda: Option<f64>,
    pub atm_weight_boost: f64,
    pub bounds: Bounds,
    pub n_starts: usize,
    pub seed: u64,
    /// Relative loss spread at which a simplex is considered converged.
    pub tol: f64,
    /// Loss evaluations allowed per start.
    pub max_evals: usize,
    /// Extra start point, tried first.
    pub initial: Option<[f64; 5]>,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            reg_lambda: None,
            atm_weight_boost: 2.0,
            bounds: Bounds::default(),
            n_starts: 24,
            seed: 7,
            tol: 1e-10,
            max_evals: 40_000,
            initial: None,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.reg_lambda {
            if !(l >= 0.0) {
                return Err(NesError::invalid("reg_lambda must be nonnegative"));
            }
        }
        if (0..5).any(|i| !(self.bounds.lower[i] < self.bounds.upper[i])) {
            return Err(NesError::invalid("each lower bound must be below its upper bound"));
        }
        if self.bounds.lower[1] <= 0.0 || self.bounds.lower[2] <= 0.0 || self.bounds.lower[4] <= 0.0 {
            return Err(NesError::invalid("sigma and h bounds must be positive"));
        }
        if self.bounds.lower[3] < 0.0 || self.bounds.upper[3] > 1.0 || self.bounds.lower[0] < 0.0 {
            return Err(NesError::invalid("a must be bounded in [0, 1] and mu below by 0"));
        }
        if self.n_starts == 0 {
            return Err(NesError::invalid("n_starts must be at least 1"));
        }
        if !(self.tol > 0.0) || self.max_evals < 10 || !(self.atm_weight_boost > 0.0) {
            return Err(NesError::invalid("tol, max_evals and atm_weight_boost must be positive"));
        }
        Ok(())
    }
}

/// Parameter vector to model parameters at horizon `t`.
pub fn params_from_vector(x: &[f64; 5], t: f64) -> Result<NesParams> {
    NesParams::symmetric(x[0], x[1], x[2], x[3], x[4], t)
}

pub fn vector_from_params(p: &NesParams) -> [f64; 5] {
    [p.mu1, p.sigma1, p.sigma2, p.a, p.h]
}

/// Prepared quotes: weights, horizon and normalized market.
#[derive(Debug, Clone)]
pub struct LossSetup {
    pub quotes: Vec<OptionQuote>,
    pub weights: Vec<f64>,
    pub warnings: Vec<String>,
    pub market: MarketEnv,
    pub expiry: f64,
    pub kind: OptionKind,
    pub reg_lambda: f64,
}

impl LossSetup {
    pub fn new(quotes: &[OptionQuote], market: &MarketEnv, cfg: &CalibConfig) -> Result<Self> {
        market.validate()?;
        cfg.validate()?;
        let first = quotes.first().ok_or_else(|| NesError::invalid("at least one quote is required"))?;
        for q in quotes {
            q.validate()?;
            if q.kind != first.kind {
                return Err(NesError::invalid("calls and puts must be calibrated separately"));
            }
            if (q.expiry_t - first.expiry_t).abs() > 1e-12 * first.expiry_t {
                return Err(NesError::invalid("all quotes in a run must share one expiry"));
            }
        }
        let mut warnings = Vec::new();
        let mut weights: Vec<f64> = quotes
            .iter()
            .map(|q| match bs_delta_from_implied(q, market) {
                Ok(d) if d > 0.0 => 1.0 / d,
                Ok(_) | Err(_) => {
                    warnings.push(format!("strike {}: implied-vol inversion failed, unit weight used", q.strike));
                    1.0
                }
            })
            .collect();
        let atm = quotes
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (a.1.strike - market.spot).abs();
                let db = (b.1.strike - market.spot).abs();
                da.partial_cmp(&db).unwrap().then(a.0.cmp(&b.0))
            })
            .map(|(i, _)| i)
            .unwrap();
        weights[atm] *= cfg.atm_weight_boost;
        let mean_mid = quotes.iter().map(|q| q.mid).sum::<f64>() / quotes.len() as f64;
        let reg_lambda = cfg.reg_lambda.unwrap_or(1e3 * mean_mid * mean_mid);
        Ok(LossSetup {
            quotes: quotes.to_vec(),
            weights,
            warnings,
            market: *market,
            expiry: first.expiry_t,
            kind: first.kind,
            reg_lambda,
        })
    }

    fn pricer(&self, p: &NesParams) -> Result<NesPricer> {
        let unit = MarketEnv { spot: 1.0, ..self.market };
        NesPricer::new(p, &unit)
    }

    /// Model prices in the quote's units.
    pub fn model_prices(&self, p: &NesParams) -> Result<(Vec<f64>, f64, f64)> {
        let pr = self.pricer(p)?;
        let s = self.market.spot;
        let prices = self.quotes.iter().map(|q| s * pr.price(q.strike / s, self.kind)).collect();
        Ok((prices, pr.xi_prime, pr.constraint_residual()))
    }

    /// Loss with `w_n` scaled by `weight_scale` (used for linearity checks).
    pub fn loss_scaled(&self, p: &NesParams, weight_scale: f64) -> Result<f64> {
        let (prices, _, res) = self.model_prices(p)?;
        let fit: f64 = prices
            .iter()
            .zip(&self.quotes)
            .zip(&self.weights)
            .map(|((m, q), w)| weight_scale * w * (m - q.mid).powi(2))
            .sum::<f64>()
            / self.quotes.len() as f64;
        Ok(fit + self.reg_lambda * res * res)
    }

    pub fn loss(&self, p: &NesParams) -> Result<f64> {
        self.loss_scaled(p, 1.0)
    }

    fn loss_vec(&self, x: &[f64; 5]) -> f64 {
        params_from_vector(x, self.expiry)
            .and_then(|p| self.loss(&p))
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::MAX)
    }
}

/// Regularized weighted quadratic loss.
pub fn loss(params: &NesParams, quotes: &[OptionQuote], market: &MarketEnv, cfg: &CalibConfig) -> Result<f64> {
    LossSetup::new(quotes, market, cfg)?.loss(&params.with_t(quotes[0].expiry_t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: [f64; 5],
    pub initial_loss: f64,
    pub final_loss: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: NesParams,
    pub xi_prime: f64,
    pub loss: f64,
    /// Mean absolute pricing error in price units.
    pub mape: f64,
    /// Mean of `|model - mid| / mid`.
    pub mape_relative: f64,
    pub per_quote_errors: Vec<f64>,
    pub converged: bool,
    pub starts_summary: Vec<StartSummary>,
    pub warnings: Vec<String>,
}

fn latin_hypercube(n: usize, bounds: &Bounds, rng: &mut ChaCha8Rng) -> Vec<[f64; 5]> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(5);
    for d in 0..5 {
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + rng.gen::<f64>()) / n as f64;
                bounds.lower[d] + u * (bounds.upper[d] - bounds.lower[d])
            })
            .collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            v.swap(i, j);
        }
        cols.push(v);
    }
    (0..n).map(|i| std::array::from_fn(|d| cols[d][i])).collect()
}

/// Bounded Nelder-Mead with dimension-adaptive coefficients; vertices are
/// projected onto the box. Restarts from the best vertex until a restart no
/// longer improves the loss.
fn nelder_mead(f: &dyn Fn(&[f64; 5]) -> f64, x0: [f64; 5], bounds: &Bounds, tol: f64, max_evals: usize) -> ([f64; 5], f64, usize) {
    const N: usize = 5;
    let n = N as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2.0 * n), 1.0 - 1.0 / n);
    let mut evals = 0;
    let mut best_x = x0;
    let mut best_f = f(&x0);
    evals += 1;
    let mut scale = 0.1;
    for _restart in 0..40 {
        let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
        simplex.push((best_x, best_f));
        for i in 0..N {
            let mut x = best_x;
            let w = bounds.upper[i] - bounds.lower[i];
            let step = scale * w;
            x[i] = if x[i] + step <= bounds.upper[i] { x[i] + step } else { x[i] - step };
            bounds.clamp(&mut x);
            let fx = f(&x);
            evals += 1;
            simplex.push((x, fx));
        }
        loop {
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let (fl, fh) = (simplex[0].1, simplex[N].1);
            let diam = simplex[1..]
                .iter()
                .map(|(x, _)| (0..N).map(|i| (x[i] - simplex[0].0[i]).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if fh - fl <= tol * fl.abs() + 1e-300 || diam < 1e-13 || evals >= max_evals {
                break;
            }
            let mut c = [0.0; N];
            for (x, _) in &simplex[..N] {
                for i in 0..N {
                    c[i] += x[i] / n;
                }
            }
            let worst = simplex[N].0;
            let point = |t: f64| {
                let mut x: [f64; N] = std::array::from_fn(|i| c[i] + t * (c[i] - worst[i]));
                bounds.clamp(&mut x);
                x
            };
            let xr = point(alpha);
            let fr = f(&xr);
            evals += 1;
            if fr < simplex[0].1 {
                let xe = point(alpha * beta);
                let fe = f(&xe);
                evals += 1;
                simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[N - 1].1 {
                simplex[N] = (xr, fr);
            } else {
                let (xc, fc) = if fr < fh {
                    let x = point(alpha * gamma);
                    (x, f(&x))
                } else {
                    let x = point(-gamma);
                    (x, f(&x))
                };
                evals += 1;
                if fc < fr.min(fh) {
                    simplex[N] = (xc, fc);
                } else {
                    let x0 = simplex[0].0;
                    for v in simplex.iter_mut().skip(1) {
                        let mut x: [f64; N] = std::array::from_fn(|i| x0[i] + delta * (v.0[i] - x0[i]));
                        bounds.clamp(&mut x);
                        *v = (x, f(&x));
                        evals += 1;
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let improved = simplex[0].1 < best_f * (1.0 - 1e-3 * tol) || (best_f > 0.0 && simplex[0].1 == 0.0);
        if simplex[0].1 <= best_f {
            best_x = simplex[0].0;
            best_f = simplex[0].1;
        }
        if evals >= max_evals || best_f == 0.0 {
            break;
        }
        if !improved {
            if scale < 1e-6 {
                break;
            }
            scale *= 0.1;
        } else {
            scale = (scale * 0.5).max(1e-4);
        }
    }
    (best_x, best_f, evals)
}

/// Calibrates to quotes sharing one expiry and option kind.
pub fn calibrate(quotes: &[OptionQuote], market: &MarketEnv, cfg: &CalibConfig) -> Result<CalibrationResult> {
    let setup = LossSetup::new(quotes, market, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = Vec::new();
    if let Some(mut x) = cfg.initial {
        cfg.bounds.clamp(&mut x);
        starts.push(x);
    }
    starts.extend(latin_hypercube(cfg.n_starts, &cfg.bounds, &mut rng));
    let mean_mid = quotes.iter().map(|q| q.mid).sum::<f64>() / quotes.len() as f64;
    // a start already fitting to ~tol relative price error is kept as is
    let floor = (cfg.tol * mean_mid).powi(2);

    let f = |x: &[f64; 5]| setup.loss_vec(x);
    let runs: Vec<(usize, StartSummary, [f64; 5])> = starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let f0 = f(x0);
            let (x, fx, ev) = if f0 <= floor {
                (*x0, f0, 1)
            } else {
                nelder_mead(&f, *x0, &cfg.bounds, cfg.tol, cfg.max_evals)
            };
            (i, StartSummary { start: *x0, initial_loss: f0, final_loss: fx, evaluations: ev }, x)
        })
        .collect();
    // lowest loss, ties broken by start index; losses under the floor all tie
    let key = |l: f64| if l <= floor { 0.0 } else { l };
    let (_, best_summary, best_x) = runs
        .iter()
        .min_by(|a, b| key(a.1.final_loss).partial_cmp(&key(b.1.final_loss)).unwrap().then(a.0.cmp(&b.0)))
        .cloned()
        .unwrap();
    let converged = best_summary.final_loss < f64::MAX
        && runs.iter().any(|r| r.1.final_loss < r.1.initial_loss || r.1.final_loss <= floor);
    let params = params_from_vector(&best_x, setup.expiry)?;
    let (prices, xi_prime, _) = setup.model_prices(&params)?;
    let errors: Vec<f64> = prices.iter().zip(quotes).map(|(m, q)| m - q.mid).collect();
    let mape = errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64;
    let mape_relative = errors
        .iter()
        .zip(quotes)
        .map(|(e, q)| if q.mid > 0.0 { e.abs() / q.mid } else { 0.0 })
        .sum::<f64>()
        / errors.len() as f64;
    Ok(CalibrationResult {
        params,
        xi_prime,
        loss: best_summary.final_loss,
        mape,
        mape_relative,
        per_quote_errors: errors,
        converged,
        starts_summary: runs.into_iter().map(|r| r.1).collect(),
        warnings: setup.warnings,
    })
}

/// Quotes priced by the model at strikes whose Black-Scholes `|delta|` spans
/// `[delta_lo, delta_hi]` evenly. Puts sit below the spot, calls above.
pub fn synthetic_quotes(
    params: &NesParams,
    market: &MarketEnv,
    kind: OptionKind,
    n: usize,
    delta_lo: f64,
    delta_hi: f64,
) -> Result<Vec<OptionQuote>> {
    if n == 0 || !(0.0 < delta_lo && delta_lo < delta_hi && delta_hi < 1.0) {
        return Err(NesError::invalid("need n >= 1 and 0 < delta_lo < delta_hi < 1"));
    }
    let pr = NesPricer::new(params, market)?;
    let t = params.t;
    let s = market.spot;
    let quote_at = |k: f64| -> Result<OptionQuote> {
        let mid = pr.price(k, kind);
        let iv = implied_vol(mid, s, k, t, market.r_f, market.q_div, kind)?;
        Ok(OptionQuote { strike: k, expiry_t: t, kind, mid, implied_vol: Some(iv) })
    };
    let abs_delta = |k: f64| -> Option<f64> {
        let q = quote_at(k).ok()?;
        bs_delta_from_implied(&q, market).ok()
    };
    let (_, var, _, _) = pr.density.mixture.central_moments();
    let width = 12.0 * var.sqrt().max(1e-3);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let target = if n == 1 { delta_hi } else { delta_lo + (delta_hi - delta_lo) * i as f64 / (n - 1) as f64 };
        // |delta| falls from ~1 (deep ITM) to 0 (deep OTM) along ln K for calls,
        // and rises for puts; a failed inversion counts as the nearer extreme
        let (mut lo, mut hi) = (-width, width);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let k = s * mid.exp();
            let d = abs_delta(k).unwrap_or(match (kind, mid < 0.0) {
                (OptionKind::Call, true) | (OptionKind::Put, false) => 1.0,
                _ => 0.0,
            });
            let go_right = match kind {
                OptionKind::Call => d > target,
                OptionKind::Put => d < target,
            };
            if go_right {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        out.push(quote_at(s * (0.5 * (lo + hi)).exp())?);
    }
    out.sort_by(|a, b| a.strike.partial_cmp(&b.strike).unwrap());
    Ok(out)
}

/// Market regime implied by the potential and the current log-return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Equilibrium,
    Unstable,
    Metastable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedPotentialReport {
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub critical_points: Vec<CriticalPoint>,
    pub double_well: bool,
    pub global_min: f64,
    pub y0: f64,
    pub regime: Regime,
}

/// Classifies `y0` against the implied potential.
///
/// Metastable: `y0` lies on the local-minimum side of a double-well barrier.
/// Equilibrium: `y0` is within two stationary widths `h / sqrt(2 V'')` of the
/// global minimum. Unstable otherwise.
pub fn classify_regime(pot: &Potential, y0: f64) -> Regime {
    if let Shape::DoubleWell { barrier, .. } = pot.shape() {
        let (loc, _) = pot.local_min_and_barrier().unwrap();
        if (y0 - barrier) * (loc - barrier) > 0.0 {
            return Regime::Metastable;
        }
    }
    let g = pot.global_min();
    let v2 = pot.derivs(g).v2;
    let width = pot.params().h / (2.0 * v2).sqrt();
    if (y0 - g).abs() <= 2.0 * width {
        Regime::Equilibrium
    } else {
        Regime::Unstable
    }
}

/// Potential curve on `n` points across the stationary support, with the regime of `y0`.
pub fn implied_potential_report(params: &NesParams, y0: f64, n: usize) -> Result<ImpliedPotentialReport> {
    let pot = Potential::new(params)?;
    let (mut lo, mut hi) = pot.stationary().mixture.support(4.0);
    lo = lo.min(y0 - 0.1 * (hi - lo));
    hi = hi.max(y0 + 0.1 * (hi - lo));
    let n = n.max(2);
    let y: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let v = y.iter().map(|&x| pot.value(x)).collect();
    Ok(ImpliedPotentialReport {
        y,
        v,
        critical_points: pot.critical_points().to_vec(),
        double_well: pot.shape().is_double(),
        global_min: pot.global_min(),
        y0,
        regime: classify_regime(&pot, y0),
    })
}

//! European options as mixtures of Black-Scholes prices.
//!
//! Under the risk-neutral mixture each component is lognormal with volatility
//! `sigma_hat_k = sigma_k / sqrt(2)`, so a vanilla price is a weighted sum of
//! Black-Scholes prices with per-component NES dividends
//! `q_k = r_f - mu_k - (xi' + 1/2) sigma_hat_k^2`.

use crate::error::{NesError, Result};
use crate::nesdist::{risk_neutral_density_with_xi, solve_xi_prime, MeasureDensity};
use crate::potential::NesParams;
use crate::quad::{integrate_with_breaks, QuadOptions};
use crate::special::norm_cdf;
use serde::{Deserialize, Serialize};

/// Spot and carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketEnv {
    pub spot: f64,
    pub r_f: f64,
    pub q_div: f64,
}

impl MarketEnv {
    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(NesError::invalid("spot must be positive"));
        }
        if !(self.r_f.is_finite() && self.q_div.is_finite()) {
            return Err(NesError::invalid("rates must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

impl std::str::FromStr for OptionKind {
    type Err = NesError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "call" | "c" => Ok(OptionKind::Call),
            "put" | "p" => Ok(OptionKind::Put),
            other => Err(NesError::invalid(format!("unknown option kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptionKind::Call => "call",
            OptionKind::Put => "put",
        })
    }
}

/// A market quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub strike: f64,
    #[serde(rename = "expiry_T")]
    pub expiry_t: f64,
    pub kind: OptionKind,
    pub mid: f64,
    #[serde(default)]
    pub implied_vol: Option<f64>,
}

impl OptionQuote {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.expiry_t > 0.0) {
            return Err(NesError::invalid("strike and expiry must be positive"));
        }
        if !(self.mid >= 0.0 && self.mid.is_finite()) {
            return Err(NesError::invalid("quote price must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-component effective dividend rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NesDividends {
    pub q: [f64; 3],
}

fn d1_d2(spot: f64, strike: f64, t: f64, vol: f64, r: f64, q: f64) -> (f64, f64) {
    let sd = vol * t.sqrt();
    let d1 = ((spot / strike).ln() + (r - q + 0.5 * vol * vol) * t) / sd;
    (d1, d1 - sd)
}

/// Black-Scholes price with a continuous dividend yield.
pub fn bs_price(spot: f64, strike: f64, t: f64, vol: f64, r: f64, q: f64, kind: OptionKind) -> f64 {
    let df_q = (-q * t).exp();
    let df_r = (-r * t).exp();
    if vol * t.sqrt() <= 0.0 {
        let fwd = spot * df_q - strike * df_r;
        return match kind {
            OptionKind::Call => fwd.max(0.0),
            OptionKind::Put => (-fwd).max(0.0),
        };
    }
    let (d1, d2) = d1_d2(spot, strike, t, vol, r, q);
    match kind {
        OptionKind::Call => spot * df_q * norm_cdf(d1) - strike * df_r * norm_cdf(d2),
        OptionKind::Put => strike * df_r * norm_cdf(-d2) - spot * df_q * norm_cdf(-d1),
    }
}

/// Black-Scholes delta.
pub fn bs_delta(spot: f64, strike: f64, t: f64, vol: f64, r: f64, q: f64, kind: OptionKind) -> f64 {
    let (d1, _) = d1_d2(spot, strike, t, vol, r, q);
    let df_q = (-q * t).exp();
    match kind {
        OptionKind::Call => df_q * norm_cdf(d1),
        OptionKind::Put => -df_q * norm_cdf(-d1),
    }
}

const VOL_LO: f64 = 1e-4;
const VOL_HI: f64 = 5.0;

/// Implied volatility by bisection on `[1e-4, 5]`.
pub fn implied_vol(price: f64, spot: f64, strike: f64, t: f64, r: f64, q: f64, kind: OptionKind) -> Result<f64> {
    let df_q = (-q * t).exp();
    let df_r = (-r * t).exp();
    let (lower, upper) = match kind {
        OptionKind::Call => ((spot * df_q - strike * df_r).max(0.0), spot * df_q),
        OptionKind::Put => ((strike * df_r - spot * df_q).max(0.0), strike * df_r),
    };
    if price < lower {
        return Err(NesError::NoArbitrage { bound: format!("lower ({lower:e})") });
    }
    if price > upper {
        return Err(NesError::NoArbitrage { bound: format!("upper ({upper:e})") });
    }
    let f = |v: f64| bs_price(spot, strike, t, v, r, q, kind) - price;
    let (mut lo, mut hi) = (VOL_LO, VOL_HI);
    let (flo, fhi) = (f(lo), f(hi));
    if flo > 0.0 || fhi < 0.0 {
        return Err(NesError::NonConvergence {
            what: "implied volatility bracket [1e-4, 5]".into(),
            iterations: 0,
            achieved: if flo > 0.0 { flo } else { -fhi },
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `|delta|` at the quote's implied volatility, inverted from the mid if absent.
pub fn bs_delta_from_implied(quote: &OptionQuote, market: &MarketEnv) -> Result<f64> {
    quote.validate()?;
    let vol = match quote.implied_vol {
        Some(v) if v > 0.0 => v,
        _ => implied_vol(quote.mid, market.spot, quote.strike, quote.expiry_t, market.r_f, market.q_div, quote.kind)?,
    };
    Ok(bs_delta(market.spot, quote.strike, quote.expiry_t, vol, market.r_f, market.q_div, quote.kind).abs())
}

/// Closed-form NES pricer for a fixed horizon.
#[derive(Debug, Clone)]
pub struct NesPricer {
    pub market: MarketEnv,
    pub params: NesParams,
    pub xi_prime: f64,
    pub density: MeasureDensity,
    pub dividends: NesDividends,
}

impl NesPricer {
    /// Solves for `xi'` at horizon `params.t`.
    pub fn new(params: &NesParams, market: &MarketEnv) -> Result<Self> {
        let xi = solve_xi_prime(params, market)?.xi_prime;
        Self::with_xi(params, market, xi)
    }

    /// Uses a given `xi'`.
    pub fn with_xi(params: &NesParams, market: &MarketEnv, xi_prime: f64) -> Result<Self> {
        market.validate()?;
        let density = risk_neutral_density_with_xi(params, xi_prime)?;
        let sd = crate::potential::stationary_density(params)?;
        let q = std::array::from_fn(|k| market.r_f - sd.mu[k] - (xi_prime + 0.5) * density.sigma_hat_sq[k]);
        Ok(NesPricer { market: *market, params: *params, xi_prime, density, dividends: NesDividends { q } })
    }

    pub fn price(&self, strike: f64, kind: OptionKind) -> f64 {
        let w = self.density.weights();
        let t = self.params.t;
        (0..3)
            .map(|k| {
                let vol = self.density.sigma_hat_sq[k].sqrt();
                w[k] * bs_price(self.market.spot, strike, t, vol, self.market.r_f, self.dividends.q[k], kind)
            })
            .sum()
    }

    /// `S0 sum_k omega_k^(q) exp(-q_k T)`, the discounted forward of the mixture.
    pub fn discounted_forward(&self) -> f64 {
        let w = self.density.weights();
        let t = self.params.t;
        self.market.spot * (0..3).map(|k| w[k] * (-self.dividends.q[k] * t).exp()).sum::<f64>()
    }

    /// Constraint residual `sum omega^(q) mu^(q) - (r_f - q - h^2/2)`.
    pub fn constraint_residual(&self) -> f64 {
        let w = self.density.weights();
        let m: f64 = (0..3).map(|k| w[k] * self.density.mu[k]).sum();
        m - crate::nesdist::target_drift(&self.params, &self.market)
    }
}

/// Closed-form NES price at horizon `t`.
pub fn nes_option_price(params: &NesParams, market: &MarketEnv, strike: f64, t: f64, kind: OptionKind) -> Result<f64> {
    check_strike(strike)?;
    Ok(NesPricer::new(&params.with_t(t), market)?.price(strike, kind))
}

fn check_strike(strike: f64) -> Result<()> {
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(NesError::invalid("strike must be positive"));
    }
    Ok(())
}

/// Discounted payoff integrated against the risk-neutral density over +-12 stdevs.
pub fn price_by_quadrature(params: &NesParams, market: &MarketEnv, strike: f64, t: f64, kind: OptionKind) -> Result<f64> {
    check_strike(strike)?;
    let p = params.with_t(t);
    let pricer = NesPricer::new(&p, market)?;
    price_density_by_quadrature(&pricer.density, market, strike, kind, |y| {
        let s = market.spot * y.exp();
        match kind {
            OptionKind::Call => (s - strike).max(0.0),
            OptionKind::Put => (strike - s).max(0.0),
        }
    })
}

/// `exp(-r T) int payoff(y) q(y) dy` for an arbitrary log-return payoff;
/// `kind` only positions the kink at `ln(K / S0)`.
pub fn price_density_by_quadrature(
    density: &MeasureDensity,
    market: &MarketEnv,
    strike: f64,
    _kind: OptionKind,
    payoff: impl Fn(f64) -> f64,
) -> Result<f64> {
    let t = density.base.t;
    let (lo, hi) = density.mixture.support(12.0);
    let kink = (strike / market.spot).ln();
    let mut pts = vec![lo];
    if kink > lo && kink < hi {
        pts.push(kink);
    }
    pts.extend(density.mixture.means().iter().cloned().filter(|m| *m > lo && *m < hi));
    pts.push(hi);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-13, max_subdivisions: 4000 };
    let r = integrate_with_breaks(|y| payoff(y) * density.pdf(y), &pts, &opts)?;
    Ok((-market.r_f * t).exp() * r.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson;
    use proptest::prelude::*;

    fn mkt() -> MarketEnv {
        MarketEnv { spot: 1.0, r_f: 0.0005, q_div: 0.013 }
    }
    fn rows() -> Vec<NesParams> {
        let rows = [
            (0.092, 0.09, 0.461, 0.505, 0.159, 28.0),
            (0.191, 0.07, 0.263, 0.566, 0.162, 28.0),
            (0.092, 0.251, 0.813, 0.405, 0.165, 319.0),
            (0.106, 0.123, 0.505, 0.565, 0.217, 319.0),
            (0.225, 0.213, 1.120, 0.763, 0.632, 186.0),
            (0.503, 0.118, 0.803, 0.662, 0.824, 186.0),
        ];
        rows.iter()
            .map(|&(m, s1, s2, a, h, d)| NesParams::symmetric(m, s1, s2, a, h, d / 365.0).unwrap())
            .collect()
    }

    #[test]
    fn bs_atm_reference() {
        // lognormal payoff integral
        let (s, k, t, v): (f64, f64, f64, f64) = (100.0, 100.0, 1.0, 0.2);
        let oracle = adaptive_simpson(
            |z| {
                let st = s * ((-0.5 * v * v) * t + v * t.sqrt() * z).exp();
                (st - k).max(0.0) * crate::special::norm_pdf(z)
            },
            (k / s).ln() / (v * t.sqrt()) + 0.5 * v * t.sqrt(),
            12.0,
            1e-13,
        );
        let p = bs_price(s, k, t, v, 0.0, 0.0, OptionKind::Call);
        assert!((p - oracle).abs() < 1e-9);
        assert!((p - 7.9656).abs() < 5e-5);
    }

    #[test]
    fn bs_zero_vol_limit_and_parity() {
        let c = bs_price(100.0, 90.0, 1.0, 1e-12, 0.05, 0.01, OptionKind::Call);
        let expect = (-0.05f64).exp() * (100.0 * (0.04f64).exp() - 90.0);
        assert!((c - expect).abs() < 1e-10);
        for &k in &[50.0, 90.0, 100.0, 130.0] {
            let c = bs_price(100.0, k, 0.7, 0.3, 0.03, 0.02, OptionKind::Call);
            let p = bs_price(100.0, k, 0.7, 0.3, 0.03, 0.02, OptionKind::Put);
            let f = 100.0 * (-0.02 * 0.7f64).exp() - k * (-0.03 * 0.7f64).exp();
            assert!((c - p - f).abs() < 1e-12);
        }
    }

    #[test]
    fn implied_vol_round_trip_and_bounds() {
        for &(k, v) in &[(0.8, 0.1), (1.0, 0.25), (1.3, 0.6)] {
            for kind in [OptionKind::Call, OptionKind::Put] {
                let p = bs_price(1.0, k, 0.5, v, 0.01, 0.0, kind);
                let iv = implied_vol(p, 1.0, k, 0.5, 0.01, 0.0, kind).unwrap();
                assert!((iv - v).abs() < 1e-8);
            }
        }
        assert!(matches!(implied_vol(2.0, 1.0, 1.0, 0.5, 0.0, 0.0, OptionKind::Call), Err(NesError::NoArbitrage { .. })));
        assert!(matches!(implied_vol(0.5, 1.0, 0.4, 0.5, 0.0, 0.0, OptionKind::Call), Err(NesError::NoArbitrage { .. })));
    }

    #[test]
    fn delta_limits() {
        let q = OptionQuote { strike: 1.0, expiry_t: 0.01, kind: OptionKind::Call, mid: 0.0, implied_vol: Some(0.2) };
        let m = MarketEnv { spot: 1.0, r_f: 0.0, q_div: 0.0 };
        assert!((bs_delta_from_implied(&q, &m).unwrap() - 0.5).abs() < 0.02);
        let deep = OptionQuote { strike: 1e-3, expiry_t: 1.0, kind: OptionKind::Call, mid: 0.0, implied_vol: Some(0.2) };
        let m2 = MarketEnv { spot: 1.0, r_f: 0.0, q_div: 0.03 };
        assert!((bs_delta_from_implied(&deep, &m2).unwrap() - (-0.03f64).exp()).abs() < 1e-12);
        let p = bs_price(1.0, 1.1, 0.3, 0.25, 0.0, 0.03, OptionKind::Put);
        let quote = OptionQuote { strike: 1.1, expiry_t: 0.3, kind: OptionKind::Put, mid: p, implied_vol: None };
        let d = bs_delta_from_implied(&quote, &m2).unwrap();
        assert!((d - bs_delta(1.0, 1.1, 0.3, 0.25, 0.0, 0.03, OptionKind::Put).abs()).abs() < 1e-8);
    }

    #[test]
    fn closed_form_matches_quadrature_on_grid() {
        for p in rows() {
            for &t in &[0.05, 0.25, 0.5, 1.0, 2.0] {
                for &k in &[0.8, 0.9, 1.0, 1.1, 1.2] {
                    for kind in [OptionKind::Call, OptionKind::Put] {
                        let c = nes_option_price(&p, &mkt(), k, t, kind).unwrap();
                        let q = price_by_quadrature(&p, &mkt(), k, t, kind).unwrap();
                        assert!(((c - q) / q).abs() < 1e-8, "{p:?} t {t} k {k} {kind}: {c} vs {q}");
                    }
                }
            }
        }
    }

    #[test]
    fn mixture_parity_and_forward_limit() {
        for p in rows() {
            let pr = NesPricer::new(&p, &mkt()).unwrap();
            let df = (-mkt().r_f * p.t).exp();
            for &k in &[0.7, 1.0, 1.4] {
                let lhs = pr.price(k, OptionKind::Call) - pr.price(k, OptionKind::Put);
                assert!((lhs - (pr.discounted_forward() - k * df)).abs() < 1e-12);
            }
            // K -> 0 leaves the discounted forward less the vanishing strike leg
            let k0 = 1e-9;
            let c0 = pr.price(k0, OptionKind::Call);
            assert!((c0 - (pr.discounted_forward() - k0 * df)).abs() < 1e-15);
        }
    }

    #[test]
    fn dividends_definition() {
        let p = rows()[0];
        let pr = NesPricer::new(&p, &mkt()).unwrap();
        let sd = crate::potential::stationary_density(&p).unwrap();
        for k in 0..3 {
            let s2 = sd.sigma[k] * sd.sigma[k] / 2.0;
            assert_eq!(pr.dividends.q[k], mkt().r_f - sd.mu[k] - (pr.xi_prime + 0.5) * s2);
        }
    }

    #[test]
    fn single_component_is_black_scholes() {
        let p = NesParams::new(0.05, -0.05, 0.3, 0.5, 0.0, 0.2, 0.75).unwrap();
        let pr = NesPricer::new(&p, &mkt()).unwrap();
        for &k in &[0.8, 1.0, 1.25] {
            let bs = bs_price(1.0, k, 0.75, (0.5f64 * 0.3 * 0.3).sqrt(), mkt().r_f, pr.dividends.q[0], OptionKind::Call);
            assert_eq!(pr.price(k, OptionKind::Call), bs);
        }
    }

    #[test]
    fn far_otm_is_worthless() {
        let p = NesParams::symmetric(0.01, 0.01, 0.01, 0.5, 0.01, 0.1).unwrap();
        assert!(price_by_quadrature(&p, &mkt(), 10.0, 0.1, OptionKind::Call).unwrap() < 1e-12);
    }

    #[test]
    fn quadrature_is_linear_in_payoff() {
        let p = rows()[3];
        let pr = NesPricer::new(&p, &mkt()).unwrap();
        let m = mkt();
        let a = |y: f64| (y.exp() - 1.0).max(0.0);
        let b = |y: f64| (0.9 - y.exp()).max(0.0);
        let pa = price_density_by_quadrature(&pr.density, &m, 1.0, OptionKind::Call, a).unwrap();
        let pb = price_density_by_quadrature(&pr.density, &m, 0.9, OptionKind::Put, b).unwrap();
        // the sum has kinks at both strikes; price it on each piece
        let pts = [0.9f64.ln()];
        let (lo, hi) = pr.density.mixture.support(12.0);
        let f = |y: f64| (a(y) + b(y)) * pr.density.pdf(y);
        let sum = integrate_with_breaks(f, &[lo, pts[0], 0.0, hi], &QuadOptions::rel(1e-13)).unwrap().value
            * (-m.r_f * p.t).exp();
        assert!((sum - pa - pb).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn monotone_in_strike(k in 0.5f64..1.5, dk in 0.001f64..0.2, row in 0usize..6) {
            let pr = NesPricer::new(&rows()[row], &mkt()).unwrap();
            prop_assert!(pr.price(k + dk, OptionKind::Call) <= pr.price(k, OptionKind::Call) + 1e-15);
            prop_assert!(pr.price(k + dk, OptionKind::Put) + 1e-15 >= pr.price(k, OptionKind::Put));
        }

        #[test]
        fn within_no_arbitrage_bounds(k in 0.3f64..3.0, row in 0usize..6) {
            let pr = NesPricer::new(&rows()[row], &mkt()).unwrap();
            let c = pr.price(k, OptionKind::Call);
            let fwd = pr.discounted_forward();
            let df = (-mkt().r_f * pr.params.t).exp();
            prop_assert!(c >= (fwd - k * df).max(0.0) - 1e-14 && c <= fwd + 1e-14);
        }
    }
}

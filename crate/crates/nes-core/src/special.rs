//! Error functions and the standard normal distribution.
//!
//! `erf`, `erfc` and `erfcx` follow W. J. Cody's rational Chebyshev
//! approximations, which are accurate to roughly machine precision in
//! double arithmetic. The normal CDF and its logarithm are built on top
//! of them so that far tails never underflow prematurely.

const THRESH: f64 = 0.46875;
const XSMALL: f64 = 1.11e-16;
const XBIG: f64 = 26.543;
const XHUGE: f64 = 6.71e7;
const XMAX: f64 = 2.53e307;
const XNEG: f64 = -26.628;
const SQRPI: f64 = 5.641_895_835_477_562_869_5e-1;

const A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_56e2,
    3.774_852_376_853_020_21e2,
    3.209_377_589_138_469_47e3,
    1.857_777_061_846_031_53e-1,
];
const B: [f64; 4] = [
    2.360_129_095_234_412_09e1,
    2.440_246_379_344_441_73e2,
    1.282_616_526_077_372_28e3,
    2.844_236_833_439_170_62e3,
];
const C: [f64; 9] = [
    5.641_884_969_886_700_89e-1,
    8.883_149_794_388_375_94e0,
    6.611_919_063_714_162_95e1,
    2.986_351_381_974_001_31e2,
    8.819_522_212_417_690_9e2,
    1.712_047_612_634_070_58e3,
    2.051_078_377_826_071_47e3,
    1.230_339_354_797_997_25e3,
    2.153_115_354_744_038_46e-8,
];
const D: [f64; 8] = [
    1.574_492_611_070_983_47e1,
    1.176_939_508_913_124_99e2,
    5.371_811_018_620_098_58e2,
    1.621_389_574_566_690_19e3,
    3.290_799_235_733_459_63e3,
    4.362_619_090_143_247_16e3,
    3.439_367_674_143_721_64e3,
    1.230_339_354_803_749_42e3,
];
const P: [f64; 6] = [
    3.053_266_349_612_323_44e-1,
    3.603_448_999_498_044_39e-1,
    1.257_817_261_112_292_46e-1,
    1.608_378_514_874_227_66e-2,
    6.587_491_615_298_378_03e-4,
    1.631_538_713_730_209_78e-2,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822_42e0,
    1.872_952_849_923_460_47e0,
    5.279_051_029_514_284_12e-1,
    6.051_834_131_244_131_91e-2,
    2.335_204_976_268_691_85e-3,
];

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Erf,
    Erfc,
    Erfcx,
}

/// exp(-y^2) evaluated with the split y = ysq + del to keep full precision.
fn exp_neg_sq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

fn calerf(x: f64, kind: Kind) -> f64 {
    let y = x.abs();
    let mut result;
    if y <= THRESH {
        let ysq = if y > XSMALL { y * y } else { 0.0 };
        let mut xnum = A[4] * ysq;
        let mut xden = ysq;
        for i in 0..3 {
            xnum = (xnum + A[i]) * ysq;
            xden = (xden + B[i]) * ysq;
        }
        result = x * (xnum + A[3]) / (xden + B[3]);
        if kind != Kind::Erf {
            result = 1.0 - result;
        }
        if kind == Kind::Erfcx {
            result *= ysq.exp();
        }
        return result;
    } else if y <= 4.0 {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        result = (xnum + C[7]) / (xden + D[7]);
        if kind != Kind::Erfcx {
            result *= exp_neg_sq(y);
        }
    } else {
        result = 0.0;
        let mut done = false;
        if y >= XBIG {
            if kind != Kind::Erfcx || y >= XMAX {
                done = true;
            } else if y >= XHUGE {
                result = SQRPI / y;
                done = true;
            }
        }
        if !done {
            let ysq = 1.0 / (y * y);
            let mut xnum = P[5] * ysq;
            let mut xden = ysq;
            for i in 0..4 {
                xnum = (xnum + P[i]) * ysq;
                xden = (xden + Q[i]) * ysq;
            }
            result = ysq * (xnum + P[4]) / (xden + Q[4]);
            result = (SQRPI - result) / y;
            if kind != Kind::Erfcx {
                result *= exp_neg_sq(y);
            }
        }
    }
    match kind {
        Kind::Erf => {
            result = (0.5 - result) + 0.5;
            if x < 0.0 {
                result = -result;
            }
        }
        Kind::Erfc => {
            if x < 0.0 {
                result = 2.0 - result;
            }
        }
        Kind::Erfcx => {
            if x < 0.0 {
                if x < XNEG {
                    result = f64::INFINITY;
                } else {
                    let ysq = (x * 16.0).trunc() / 16.0;
                    let del = (x - ysq) * (x + ysq);
                    let e = (ysq * ysq).exp() * del.exp();
                    result = (e + e) - result;
                }
            }
        }
    }
    result
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    calerf(x, Kind::Erf)
}

/// Complementary error function `1 - erf(x)`.
pub fn erfc(x: f64) -> f64 {
    calerf(x, Kind::Erfc)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
///
/// Overflows to infinity for `x < -26.628`.
pub fn erfcx(x: f64) -> f64 {
    calerf(x, Kind::Erfcx)
}

/// `ln erfcx(x)`, finite for every finite `x`.
pub fn ln_erfcx(x: f64) -> f64 {
    if x >= 0.0 {
        erfcx(x).ln()
    } else {
        // erfc(x) = 2 - erfc(-x) lies in (1, 2] here
        x * x + (2.0 - erfc(-x)).ln()
    }
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Logarithm of the standard normal CDF, accurate deep in the lower tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x < -5.0 {
        let z = -x * std::f64::consts::FRAC_1_SQRT_2;
        (0.5 * erfcx(z)).ln() - z * z
    } else {
        norm_cdf(x).ln()
    }
}

/// Numerically safe `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Numerically safe `ln(sum exp(v_i))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

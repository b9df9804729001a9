//! Python bindings. Structured results come back as plain dicts.

use nes_core::{
    calibrate as nes_calibrate, escape_rate as nes_escape_rate, first_excited_state,
    real_density, risk_neutral_density, simulate_paths, CalibConfig, MarketEnv, NesError, NesParams, NesPricer,
    OptionKind, OptionQuote, Potential, RateSpec, SimConfig,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(nes_py, InvalidInputError, PyValueError, "Rejected parameters or inputs.");
create_exception!(nes_py, NumericalError, PyRuntimeError, "A solver, root search or quadrature failed.");

fn to_py(e: NesError) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        InvalidInputError::new_err(e.to_string())
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn parse_kind(kind: &str) -> PyResult<OptionKind> {
    kind.parse().map_err(to_py)
}

fn market(spot: f64, r_f: f64, q_div: f64) -> PyResult<MarketEnv> {
    let m = MarketEnv { spot, r_f, q_div };
    m.validate().map_err(to_py)?;
    Ok(m)
}

/// Model parameters `(mu1, mu2, sigma1, sigma2, a, h, T)`.
#[pyclass(name = "Params", frozen, from_py_object)]
#[derive(Clone)]
struct PyParams(NesParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (mu1, mu2, sigma1, sigma2, a, h, T))]
    #[allow(non_snake_case)]
    fn new(mu1: f64, mu2: f64, sigma1: f64, sigma2: f64, a: f64, h: f64, T: f64) -> PyResult<Self> {
        NesParams::new(mu1, mu2, sigma1, sigma2, a, h, T).map(PyParams).map_err(to_py)
    }

    /// Components at `+mu` and `-mu`.
    #[staticmethod]
    #[pyo3(signature = (mu, sigma1, sigma2, a, h, T))]
    #[allow(non_snake_case)]
    fn symmetric(mu: f64, sigma1: f64, sigma2: f64, a: f64, h: f64, T: f64) -> PyResult<Self> {
        NesParams::symmetric(mu, sigma1, sigma2, a, h, T).map(PyParams).map_err(to_py)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &self.0)
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "Params(mu1={}, mu2={}, sigma1={}, sigma2={}, a={}, h={}, T={})",
            p.mu1, p.mu2, p.sigma1, p.sigma2, p.a, p.h, p.t
        )
    }
}

/// `V(y)` on the given points, zero at the global minimum.
#[pyfunction]
fn potential(params: &PyParams, ys: Vec<f64>) -> PyResult<Vec<f64>> {
    let pot = Potential::new(&params.0).map_err(to_py)?;
    Ok(ys.into_iter().map(|y| pot.value(y)).collect())
}

/// Ground-state wave function `Psi0(y)`.
#[pyfunction]
fn ground_state(params: &PyParams, ys: Vec<f64>) -> PyResult<Vec<f64>> {
    let pot = Potential::new(&params.0).map_err(to_py)?;
    Ok(ys.into_iter().map(|y| pot.ground().psi(y)).collect())
}

/// Well classification and critical points.
#[pyfunction]
fn shape(py: Python<'_>, params: &PyParams) -> PyResult<Py<PyAny>> {
    let pot = Potential::new(&params.0).map_err(to_py)?;
    #[derive(Serialize)]
    struct Out<'a> {
        shape: nes_core::Shape,
        critical_points: &'a [nes_core::CriticalPoint],
        global_min: f64,
    }
    to_dict(py, &Out { shape: pot.shape(), critical_points: pot.critical_points(), global_min: pot.global_min() })
}

/// Escape rate and mean first-passage time from `y0`.
#[pyfunction]
#[pyo3(signature = (params, y0, threshold=None))]
fn escape_rate(py: Python<'_>, params: &PyParams, y0: f64, threshold: Option<f64>) -> PyResult<Py<PyAny>> {
    let r = nes_escape_rate(&params.0, y0, threshold).map_err(to_py)?;
    to_dict(py, &r)
}

/// Ground-state energy correction and decay rate from the partner problem.
#[pyfunction]
fn first_excited(py: Python<'_>, params: &PyParams) -> PyResult<Py<PyAny>> {
    let s = first_excited_state(&params.0).map_err(to_py)?;
    let lpt = s.lpt();
    #[derive(Serialize)]
    struct Out {
        e1_bar: f64,
        e1: f64,
        lambda: f64,
        warning: Option<String>,
    }
    to_dict(py, &Out { e1_bar: lpt.e1_bar, e1: lpt.e1, lambda: lpt.lambda(), warning: s.warning.clone() })
}

/// Real-world density of the log-return; `rate=None` uses the exact passage rate.
#[pyfunction]
#[pyo3(signature = (params, y0, ys, rate=None))]
fn real_pdf(params: &PyParams, y0: f64, ys: Vec<f64>, rate: Option<f64>) -> PyResult<Vec<f64>> {
    let spec = rate.map(RateSpec::Fixed).unwrap_or(RateSpec::Passage { threshold: None });
    let d = real_density(&params.0, y0, spec).map_err(to_py)?;
    Ok(ys.into_iter().map(|y| d.pdf(y)).collect())
}

/// Risk-neutral density of the log-return.
#[pyfunction]
fn rn_pdf(params: &PyParams, spot: f64, r_f: f64, q_div: f64, ys: Vec<f64>) -> PyResult<Vec<f64>> {
    let d = risk_neutral_density(&params.0, &market(spot, r_f, q_div)?).map_err(to_py)?;
    Ok(ys.into_iter().map(|y| d.pdf(y)).collect())
}

/// Option prices at expiry `params.T`; `kind` is "call" or "put".
#[pyfunction]
fn price(params: &PyParams, spot: f64, r_f: f64, q_div: f64, strikes: Vec<f64>, kind: &str) -> PyResult<Vec<f64>> {
    let kind = parse_kind(kind)?;
    let pricer = NesPricer::new(&params.0, &market(spot, r_f, q_div)?).map_err(to_py)?;
    strikes
        .into_iter()
        .map(|k| {
            if k.is_finite() && k > 0.0 {
                Ok(pricer.price(k, kind))
            } else {
                Err(InvalidInputError::new_err(format!("strike must be positive, got {k}")))
            }
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (price, spot, strike, T, r_f, q_div, kind))]
#[allow(non_snake_case)]
fn implied_vol(price: f64, spot: f64, strike: f64, T: f64, r_f: f64, q_div: f64, kind: &str) -> PyResult<f64> {
    nes_core::implied_vol(price, spot, strike, T, r_f, q_div, parse_kind(kind)?).map_err(to_py)
}

/// Fits the symmetric model to quotes given as `(T, strike, kind, mid)` tuples.
#[pyfunction]
#[pyo3(signature = (quotes, spot, r_f, q_div, seed=None, n_starts=None))]
fn calibrate(
    py: Python<'_>,
    quotes: Vec<(f64, f64, String, f64)>,
    spot: f64,
    r_f: f64,
    q_div: f64,
    seed: Option<u64>,
    n_starts: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let m = market(spot, r_f, q_div)?;
    let mut qs = Vec::with_capacity(quotes.len());
    for (t, strike, kind, mid) in quotes {
        let q = OptionQuote { strike, expiry_t: t, kind: parse_kind(&kind)?, mid, implied_vol: None };
        q.validate().map_err(to_py)?;
        qs.push(q);
    }
    let mut cfg = CalibConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = n_starts {
        cfg.n_starts = n;
    }
    let r = py.detach(|| nes_calibrate(&qs, &m, &cfg)).map_err(to_py)?;
    to_dict(py, &r)
}

/// Terminal values of Euler-Maruyama paths; deterministic in `seed`.
#[pyfunction]
#[pyo3(signature = (params, dt, n_paths, horizon, seed, y0=0.0))]
fn simulate(py: Python<'_>, params: &PyParams, dt: f64, n_paths: usize, horizon: f64, seed: u64, y0: f64) -> PyResult<Vec<f64>> {
    let cfg = SimConfig { dt, n_paths, horizon, seed, y0 };
    py.detach(|| simulate_paths(&params.0, &cfg)).map_err(to_py)
}

#[pymodule]
fn nes_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add("InvalidInputError", m.py().get_type::<InvalidInputError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(potential, m)?)?;
    m.add_function(wrap_pyfunction!(ground_state, m)?)?;
    m.add_function(wrap_pyfunction!(shape, m)?)?;
    m.add_function(wrap_pyfunction!(escape_rate, m)?)?;
    m.add_function(wrap_pyfunction!(first_excited, m)?)?;
    m.add_function(wrap_pyfunction!(real_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(rn_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(price, m)?)?;
    m.add_function(wrap_pyfunction!(implied_vol, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_kinds_parse() {
        assert_eq!(parse_kind("call").unwrap(), OptionKind::Call);
        assert_eq!(parse_kind("put").unwrap(), OptionKind::Put);
    }
}

//! Python bindings: datasets, priors, design generators, the four
//! inference methods, exact-evidence oracles, credible intervals, and the
//! design diagnostics report.
//!
//! Matrices cross the boundary as `list[list[float]]` (row-major), vectors
//! as `list[float]`; solver results and the diagnostics report come back as
//! plain dicts. All randomness is seeded.

use meanfield_glm::design::{make_block_design, make_gaussian_design, DesignCov};
use meanfield_glm::diag;
use meanfield_glm::gauss::{self, GaussFitOptions, MCConfig};
use meanfield_glm::gibbs::{self, ChibOptions, GibbsOptions};
use meanfield_glm::jj::{self, GaussianPrior, JJOptions};
use meanfield_glm::metrics;
use meanfield_glm::oracle;
use meanfield_glm::sim;
use meanfield_glm::tilt_solver::{self, TiltOptions};
use meanfield_glm::{Family, PriorSpec};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};
use serde_json::Value;

fn err(e: meanfield_glm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_family(name: &str, trials: u32) -> PyResult<Family> {
    match name {
        "linear" => Ok(Family::Linear),
        "logistic" => Ok(Family::Logistic),
        "binomial" => {
            if trials == 0 {
                Err(PyValueError::new_err(
                    "the binomial family needs trials >= 1",
                ))
            } else {
                Ok(Family::Binomial { trials })
            }
        }
        other => Err(PyValueError::new_err(format!(
            "unknown family '{other}' (expected linear, logistic, or binomial)"
        ))),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("the matrix needs at least one row"));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("all matrix rows must share a length"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        p,
        rows.into_iter().flatten(),
    ))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any().unbind(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any().unbind()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any().unbind()
            } else {
                n.as_f64()
                    .expect("JSON numbers are i64, u64, or f64")
                    .into_pyobject(py)?
                    .into_any()
                    .unbind()
            }
        }
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

/// A design/response pair under a canonical response family.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: meanfield_glm::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (x, y, family, trials = 0))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, family: &str, trials: u32) -> PyResult<Self> {
        let family = parse_family(family, trials)?;
        let inner =
            meanfield_glm::Dataset::new(to_matrix(x)?, DVector::from_vec(y), family).map_err(err)?;
        Ok(PyDataset { inner })
    }

    fn n(&self) -> usize {
        self.inner.n()
    }

    fn p(&self) -> usize {
        self.inner.p()
    }

    fn x(&self) -> Vec<Vec<f64>> {
        matrix_rows(self.inner.x())
    }

    fn y(&self) -> Vec<f64> {
        vec_of(self.inner.y())
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

/// A coefficient prior: finitely supported atoms or the standard Gaussian.
#[pyclass(name = "Prior", frozen)]
struct PyPrior {
    spec: PriorSpec,
}

#[pymethods]
impl PyPrior {
    #[staticmethod]
    fn discrete(support: Vec<f64>, probs: Vec<f64>) -> PyResult<Self> {
        let spec = PriorSpec::Discrete { support, probs };
        spec.discrete().map_err(err)?;
        Ok(PyPrior { spec })
    }

    #[staticmethod]
    fn standard_gaussian() -> Self {
        PyPrior {
            spec: PriorSpec::StandardGaussian,
        }
    }

    fn __repr__(&self) -> String {
        match &self.spec {
            PriorSpec::Discrete { support, probs } => {
                format!("Prior.discrete(support={support:?}, probs={probs:?})")
            }
            PriorSpec::StandardGaussian => "Prior.standard_gaussian()".to_string(),
        }
    }
}

/// Structured design: averaging and contrast rows, then `N(0, I/n)` fill.
#[pyfunction]
fn block_design(n: usize, p: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_rows(&make_block_design(n, p, seed).map_err(err)?))
}

/// Rows iid `N(0, scale * I / n)`.
#[pyfunction]
fn gaussian_design(n: usize, p: usize, scale: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_rows(
        &make_gaussian_design(n, p, &DesignCov::Scale(scale), seed).map_err(err)?,
    ))
}

/// Draws iid coefficients from the prior.
#[pyfunction]
fn draw_coefficients(prior: PyRef<'_, PyPrior>, p: usize, seed: u64) -> PyResult<Vec<f64>> {
    Ok(vec_of(
        &sim::draw_coefficients(&prior.spec, p, seed).map_err(err)?,
    ))
}

/// Draws responses from the family's data model at `theta = X beta`.
#[pyfunction]
#[pyo3(signature = (x, beta, family, seed, trials = 0))]
fn draw_responses(
    x: Vec<Vec<f64>>,
    beta: Vec<f64>,
    family: &str,
    seed: u64,
    trials: u32,
) -> PyResult<Vec<f64>> {
    let family = parse_family(family, trials)?;
    Ok(vec_of(&sim::draw_responses(
        &to_matrix(x)?,
        &DVector::from_vec(beta),
        family,
        seed,
    )))
}

/// Naive mean-field over exponentially tilted priors; returns a dict with
/// the fitted means `u`, the evidence lower bound, and convergence info.
#[pyfunction]
#[pyo3(signature = (data, prior, seed = 0, fit_samples = 200, report_samples = 10_000,
                    damping = 0.5, max_iter = 500, tol_u = 1e-5))]
#[allow(clippy::too_many_arguments)]
fn fit_tilt<'py>(
    py: Python<'py>,
    data: PyRef<'_, PyDataset>,
    prior: PyRef<'_, PyPrior>,
    seed: u64,
    fit_samples: usize,
    report_samples: usize,
    damping: f64,
    max_iter: usize,
    tol_u: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let discrete = prior.spec.discrete().map_err(err)?;
    let fit = tilt_solver::fit_tilt(
        &data.inner,
        &discrete,
        &MCConfig::new(fit_samples, seed, false).map_err(err)?,
        &TiltOptions {
            damping,
            max_iter,
            tol_u,
        },
    )
    .map_err(err)?;
    let elbo = tilt_solver::elbo_tilt(
        &data.inner,
        &discrete,
        &fit.state.u,
        &fit.state.d,
        &MCConfig::new(report_samples, seed, false).map_err(err)?,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("u", vec_of(&fit.state.u))?;
    out.set_item("elbo", elbo)?;
    out.set_item("converged", fit.converged)?;
    out.set_item("iterations", fit.iterations)?;
    Ok(out)
}

/// Gaussian mean-field by stochastic optimization of the CRN Monte Carlo
/// objective; requires the standard Gaussian prior.
#[pyfunction]
#[pyo3(signature = (data, prior, seed = 0, fit_samples = 2000, report_samples = 100_000,
                    antithetic = true, v_min = 1e-6, max_iter = 300))]
#[allow(clippy::too_many_arguments)]
fn fit_gauss<'py>(
    py: Python<'py>,
    data: PyRef<'_, PyDataset>,
    prior: PyRef<'_, PyPrior>,
    seed: u64,
    fit_samples: usize,
    report_samples: usize,
    antithetic: bool,
    v_min: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = gauss::fit_gauss(
        &data.inner,
        &prior.spec,
        &MCConfig::new(fit_samples, seed, antithetic).map_err(err)?,
        &GaussFitOptions {
            v_min,
            max_iter,
            tol: None,
        },
    )
    .map_err(err)?;
    let elbo = gauss::elbo_gauss_mc(
        &data.inner,
        &prior.spec,
        &fit.state,
        &MCConfig::new(report_samples, seed, antithetic).map_err(err)?,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("u", vec_of(&fit.state.u))?;
    out.set_item("v", vec_of(&fit.state.v))?;
    out.set_item("elbo", elbo)?;
    out.set_item("converged", fit.converged)?;
    out.set_item("iterations", fit.iterations)?;
    Ok(out)
}

/// Tangent-bound variational fit for logistic regression under the
/// standard Gaussian prior.
#[pyfunction]
#[pyo3(signature = (data, tol_xi = 1e-8, max_iter = 1000))]
fn fit_jj<'py>(
    py: Python<'py>,
    data: PyRef<'_, PyDataset>,
    tol_xi: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let prior = GaussianPrior::standard(data.inner.p());
    let fit = jj::fit_jj(&data.inner, &prior, &JJOptions { tol_xi, max_iter }).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("u", vec_of(&fit.state.u))?;
    out.set_item(
        "sigma_diag",
        fit.state.sigma.diagonal().iter().copied().collect::<Vec<f64>>(),
    )?;
    out.set_item("xi", vec_of(&fit.state.xi))?;
    out.set_item("converged", fit.converged)?;
    out.set_item("iterations", fit.iterations)?;
    Ok(out)
}

/// Pooled posterior mean from parallel Gibbs chains, with the largest
/// between-chain coordinate disagreement as a convergence check.
#[pyfunction]
#[pyo3(signature = (data, prior, chains = 4, sweeps = 5000, burn_in = 1000, seed = 0))]
fn posterior_mean<'py>(
    py: Python<'py>,
    data: PyRef<'_, PyDataset>,
    prior: PyRef<'_, PyPrior>,
    chains: usize,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let discrete = prior.spec.discrete().map_err(err)?;
    let summary = gibbs::posterior_mean(
        &data.inner,
        &discrete,
        &GibbsOptions {
            chains,
            sweeps,
            burn_in,
            seed,
        },
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("mean", vec_of(&summary.mean))?;
    out.set_item(
        "chain_means",
        summary.chain_means.iter().map(vec_of).collect::<Vec<_>>(),
    )?;
    out.set_item("split_disagreement", summary.split_disagreement)?;
    Ok(out)
}

/// Marginal-likelihood estimate from Gibbs output (conditional-probability
/// decomposition at the per-coordinate posterior modes).
#[pyfunction]
#[pyo3(signature = (data, prior, sweeps = 2000, burn_in = 500, seed = 0))]
fn chib_evidence(
    data: PyRef<'_, PyDataset>,
    prior: PyRef<'_, PyPrior>,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
) -> PyResult<f64> {
    let discrete = prior.spec.discrete().map_err(err)?;
    gibbs::chib_evidence(
        &data.inner,
        &discrete,
        &ChibOptions {
            sweeps,
            burn_in,
            seed,
        },
    )
    .map_err(err)
}

/// Exact log partition function: full enumeration for discrete priors, the
/// closed linear-Gaussian form or low-dimensional quadrature for the
/// standard Gaussian prior. Raises when the problem exceeds the capacity
/// of every exact routine.
#[pyfunction]
fn exact_logz(data: PyRef<'_, PyDataset>, prior: PyRef<'_, PyPrior>) -> PyResult<f64> {
    match &prior.spec {
        PriorSpec::Discrete { .. } => {
            oracle::enumerate_logz(&data.inner, &prior.spec.discrete().map_err(err)?).map_err(err)
        }
        PriorSpec::StandardGaussian => match data.inner.family() {
            Family::Linear => oracle::linear_gaussian_logz(&data.inner).map_err(err),
            _ => oracle::quadrature_logz(&data.inner).map_err(err),
        },
    }
}

/// Per-coordinate `(lo, hi)` interval endpoints of the tilted-prior
/// approximation at means `u`, widened by `epsilon`.
#[pyfunction]
#[pyo3(signature = (data, prior, u, alpha = 0.1, epsilon = 0.05))]
fn credible_intervals(
    data: PyRef<'_, PyDataset>,
    prior: PyRef<'_, PyPrior>,
    u: Vec<f64>,
    alpha: f64,
    epsilon: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let discrete = prior.spec.discrete().map_err(err)?;
    let x = data.inner.x();
    let d = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.norm_squared()));
    let intervals = metrics::credible_intervals(
        &discrete,
        data.inner.family().b2_at_zero(),
        &DVector::from_vec(u),
        &d,
        alpha,
        epsilon,
    )
    .map_err(err)?;
    Ok(intervals.iter().map(|iv| (iv.lo, iv.hi)).collect())
}

/// Average squared coordinate error `|u - beta|^2 / p`.
#[pyfunction]
fn mse(u: Vec<f64>, beta_star: Vec<f64>) -> PyResult<f64> {
    metrics::mse(&DVector::from_vec(u), &DVector::from_vec(beta_star)).map_err(err)
}

/// The full design-quality report as a dict (operator norm, tail
/// functionals, score norm, coupling-matrix probes, subset bounds).
#[pyfunction]
#[pyo3(signature = (data, delta = 0.1, c = 1.0, probes = 20, seed = 0))]
fn diagnostics_report<'py>(
    py: Python<'py>,
    data: PyRef<'_, PyDataset>,
    delta: f64,
    c: f64,
    probes: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let report = diag::diagnostics_report(&data.inner, delta, c, probes, seed).map_err(err)?;
    let value = serde_json::to_value(&report)
        .map_err(|e| PyValueError::new_err(format!("cannot serialize the report: {e}")))?;
    json_to_py(py, &value)
}

#[pymodule]
fn meanfield_glm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPrior>()?;
    m.add_function(wrap_pyfunction!(block_design, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_design, m)?)?;
    m.add_function(wrap_pyfunction!(draw_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(draw_responses, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tilt, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gauss, m)?)?;
    m.add_function(wrap_pyfunction!(fit_jj, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_mean, m)?)?;
    m.add_function(wrap_pyfunction!(chib_evidence, m)?)?;
    m.add_function(wrap_pyfunction!(exact_logz, m)?)?;
    m.add_function(wrap_pyfunction!(credible_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(diagnostics_report, m)?)?;
    Ok(())
}

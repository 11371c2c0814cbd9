//! Python bindings. Structured results (reports, check lists) cross the
//! boundary as plain dicts and lists decoded from their JSON form.

use std::sync::Arc;

use heat_spde::cli::{run_suite, Command};
use heat_spde::config::ExperimentConfig;
use heat_spde::fem::{elliptic_solve, l2_project, ritz_project, FemFunction, Mesh1D, Source};
use heat_spde::lab::certify::{assembly_checks, operator_checks, OperatorPlan};
use heat_spde::lab::rate::fit_rate as core_fit_rate;
use heat_spde::noise::{ito_isometry_check, Integrand, WienerConfig};
use heat_spde::spectral::{self, CovarianceSpec, SpectralVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

fn value_error(e: heat_spde::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn covariance(kind: &str, exponent: f64, q: Option<Vec<f64>>) -> PyResult<CovarianceSpec> {
    let spec = match kind {
        "white" => CovarianceSpec::White,
        "fractional" => CovarianceSpec::Fractional { s: exponent },
        "diagonal" => CovarianceSpec::Diagonal {
            q: q.ok_or_else(|| PyValueError::new_err("diagonal covariance needs q"))?,
        },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown covariance {other:?}, expected white, fractional or diagonal"
            )))
        }
    };
    spec.validate().map_err(value_error)?;
    Ok(spec)
}

/// Piecewise linear finite element space on a mesh of (0, 1) with
/// homogeneous Dirichlet conditions.
#[pyclass(name = "FemSpace", frozen)]
struct PyFemSpace {
    inner: Arc<heat_spde::fem::FemSpace>,
}

#[pymethods]
impl PyFemSpace {
    #[new]
    fn new(intervals: usize) -> PyResult<Self> {
        let inner = heat_spde::fem::FemSpace::uniform(intervals).map_err(value_error)?;
        Ok(PyFemSpace { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn dyadic(level: u32) -> PyResult<Self> {
        let inner = heat_spde::fem::FemSpace::dyadic(level).map_err(value_error)?;
        Ok(PyFemSpace { inner: Arc::new(inner) })
    }

    /// Mesh through `nodes`, which must run from 0 to 1 in increasing order.
    #[staticmethod]
    fn from_nodes(nodes: Vec<f64>) -> PyResult<Self> {
        let mesh = Mesh1D::from_nodes(nodes).map_err(value_error)?;
        let inner = heat_spde::fem::FemSpace::assemble(mesh).map_err(value_error)?;
        Ok(PyFemSpace { inner: Arc::new(inner) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.mesh().nodes().to_vec()
    }

    /// Eigenvalues of the discrete Laplacian, ascending.
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    fn mass_matrix(&self) -> Vec<Vec<f64>> {
        let m = self.inner.mass_matrix();
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn stiffness_matrix(&self) -> Vec<Vec<f64>> {
        let k = self.inner.stiffness_matrix();
        k.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Interior nodal values of `P_h u`, `u` given by sine coefficients.
    fn l2_project(&self, coeffs: Vec<f64>) -> PyResult<Vec<f64>> {
        let u = SpectralVector::new(coeffs);
        Ok(l2_project(&self.inner, Source::Spectral(&u)).map_err(value_error)?.into_coeffs())
    }

    /// Interior nodal values of `R_h u`.
    fn ritz_project(&self, coeffs: Vec<f64>) -> PyResult<Vec<f64>> {
        let u = SpectralVector::new(coeffs);
        Ok(ritz_project(&self.inner, &u).map_err(value_error)?.into_coeffs())
    }

    /// Interior nodal values of `A_h^{-1} P_h f`.
    fn elliptic_solve(&self, coeffs: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = SpectralVector::new(coeffs);
        Ok(elliptic_solve(&self.inner, Source::Spectral(&f)).map_err(value_error)?.into_coeffs())
    }

    /// `S_h(t) v` for interior nodal values `v`.
    fn semigroup(&self, values: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        let v = FemFunction::new(self.inner.clone(), values).map_err(value_error)?;
        Ok(v.semigroup_h(t).map_err(value_error)?.into_coeffs())
    }

    /// `||v - u||_{L2}` for nodal values `v` and sine coefficients `u`.
    fn l2_distance(&self, values: Vec<f64>, coeffs: Vec<f64>) -> PyResult<f64> {
        let v = FemFunction::new(self.inner.clone(), values).map_err(value_error)?;
        Ok(v.l2_distance_to(&SpectralVector::new(coeffs)))
    }

    fn __repr__(&self) -> String {
        format!("FemSpace(dim={}, h={})", self.inner.dim(), self.inner.h())
    }
}

/// `lambda_i = (i pi)^2`, `i >= 1`.
#[pyfunction]
fn eigenvalue(i: usize) -> f64 {
    spectral::eigenvalue(i)
}

/// Sine coefficients of `S(t) u`.
#[pyfunction]
fn spectral_semigroup(coeffs: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    Ok(SpectralVector::new(coeffs).semigroup(t).map_err(value_error)?.into_coeffs())
}

/// Sine coefficients of `P_m u`: modes beyond `m` set to zero.
#[pyfunction]
fn spectral_project(coeffs: Vec<f64>, m: usize) -> PyResult<Vec<f64>> {
    Ok(SpectralVector::new(coeffs).project(m).map_err(value_error)?.into_coeffs())
}

/// Sine coefficients of `A^gamma u`.
#[pyfunction]
fn apply_fractional(coeffs: Vec<f64>, gamma: f64) -> Vec<f64> {
    SpectralVector::new(coeffs).apply_fractional(gamma).into_coeffs()
}

/// Largest admissible regularity `beta <= 1` of a covariance.
#[pyfunction]
#[pyo3(signature = (kind, exponent = 0.0, q = None, tolerance = 1e-6))]
fn regularity_beta(kind: &str, exponent: f64, q: Option<Vec<f64>>, tolerance: f64) -> PyResult<f64> {
    spectral::regularity_beta(&covariance(kind, exponent, q)?, tolerance).map_err(value_error)
}

/// Least-squares fit of `log error` against `log h`.
#[pyfunction]
fn fit_rate<'py>(py: Python<'py>, h: Vec<f64>, error: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    if h.len() != error.len() {
        return Err(PyValueError::new_err("h and error differ in length"));
    }
    let pairs: Vec<(f64, f64)> = h.into_iter().zip(error).collect();
    to_py(py, &core_fit_rate(&pairs).map_err(value_error)?)
}

/// Monte Carlo check of the Ito isometry for `"identity"` or `"heat_kernel"`.
#[pyfunction]
#[pyo3(signature = (integrand, modes, final_time, dt, samples, seed = 0, kind = "fractional", exponent = 0.75))]
#[allow(clippy::too_many_arguments)]
fn ito_check<'py>(
    py: Python<'py>,
    integrand: &str,
    modes: usize,
    final_time: f64,
    dt: f64,
    samples: usize,
    seed: u64,
    kind: &str,
    exponent: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let integrand = match integrand {
        "identity" => Integrand::Identity { modes },
        "heat_kernel" => Integrand::HeatKernel { modes },
        "zero" => Integrand::Zero,
        other => return Err(PyValueError::new_err(format!("unknown integrand {other:?}"))),
    };
    let wiener = WienerConfig::new(modes.max(1), covariance(kind, exponent, None)?, seed).map_err(value_error)?;
    let report = py
        .detach(|| ito_isometry_check(integrand, &wiener, final_time, dt, samples))
        .map_err(value_error)?;
    to_py(py, &report)
}

/// Finite element matrix checks and elliptic rates on dyadic `levels`.
#[pyfunction]
#[pyo3(signature = (levels, rate_slack = 0.1))]
fn assembly_certificate<'py>(py: Python<'py>, levels: Vec<u32>, rate_slack: f64) -> PyResult<Bound<'py, PyAny>> {
    let checks = py.detach(|| assembly_checks(&levels, rate_slack)).map_err(value_error)?;
    to_py(py, &checks)
}

/// Projection, smoothing, norm equivalence and spectral projection checks.
#[pyfunction]
#[pyo3(signature = (levels, test_modes = 512, random_vectors = 100, oracle_modes = 2048, seed = 0))]
fn operator_certificate<'py>(
    py: Python<'py>,
    levels: Vec<u32>,
    test_modes: usize,
    random_vectors: usize,
    oracle_modes: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let plan = OperatorPlan {
        levels,
        test_modes,
        random_vectors,
        oracle_modes,
        seed,
        ..OperatorPlan::default()
    };
    let checks = py.detach(|| operator_checks(&plan)).map_err(value_error)?;
    to_py(py, &checks)
}

/// Runs a suite (`"strong-rate"`, `"weak-rate"`, ...) on a configuration given
/// as TOML text, or the built-in default, with `section.key=value` overrides.
#[pyfunction]
#[pyo3(signature = (suite, config = None, overrides = Vec::new()))]
fn run<'py>(
    py: Python<'py>,
    suite: &str,
    config: Option<&str>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let command = match suite {
        "assemble-check" => Command::AssembleCheck,
        "operator-check" => Command::OperatorCheck,
        "ito-check" => Command::ItoCheck,
        "strong-rate" => Command::StrongRate,
        "weak-rate" => Command::WeakRate,
        "all" => Command::All,
        other => return Err(PyValueError::new_err(format!("unknown suite {other:?}"))),
    };
    let cfg = match config {
        Some(text) => ExperimentConfig::parse(text, "<config>", &overrides),
        None => ExperimentConfig::load(None, &overrides),
    }
    .map_err(value_error)?;
    let outcome = py.detach(|| run_suite(command, &cfg)).map_err(value_error)?;
    let value = serde_json::json!({ "passed": outcome.passed(), "outcome": outcome });
    to_py(py, &value)
}

#[pymodule]
fn heat_spde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFemSpace>()?;
    m.add_function(wrap_pyfunction!(eigenvalue, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_semigroup, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_project, m)?)?;
    m.add_function(wrap_pyfunction!(apply_fractional, m)?)?;
    m.add_function(wrap_pyfunction!(regularity_beta, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(ito_check, m)?)?;
    m.add_function(wrap_pyfunction!(assembly_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(operator_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

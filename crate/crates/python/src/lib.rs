//! Python bindings: datasets, objective evaluation, projection, screening,
//! simulation and the oracle self-checks.

use metric_screen::cli::GammaArg;
use metric_screen::experiments::distance_correlation as dcor;
use metric_screen::kernels::KernelSpec;
use metric_screen::objective::{evaluate_with_gradient, WeightedDataset};
use metric_screen::optimizer::{project as project_l1, ConstraintSet};
use metric_screen::oracle::{run_oracle_checks, OracleOptions};
use metric_screen::rebalance::{rebalance, BoostConfig};
use metric_screen::screening::{screen as run_screen, ScreenConfig, ScreenMode, ScreenResult};
use metric_screen::simgen::{generate, xor_closed_form as xor_cf, ModelSpec};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kernel(name: &str) -> PyResult<KernelSpec> {
    match name {
        "laplace" => Ok(KernelSpec::laplace()),
        "gaussian" => Ok(KernelSpec::gaussian()),
        other => Err(py_err(format!(
            "unknown kernel '{other}' (laplace or gaussian)"
        ))),
    }
}

/// Row-major features with binary labels and per-row weights.
#[pyclass(name = "Dataset", module = "metric_screen")]
pub struct PyDataset {
    inner: WeightedDataset,
}

#[pymethods]
impl PyDataset {
    /// Balanced starting weights unless `weights` is given.
    #[new]
    #[pyo3(signature = (features, labels, weights=None))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<u8>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let n = features.len();
        let p = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != p) {
            return Err(py_err("all feature rows must have the same length"));
        }
        let flat: Vec<f64> = features.into_iter().flatten().collect();
        let inner = match weights {
            Some(w) => WeightedDataset::new(flat, n, p, labels, w),
            None => WeightedDataset::balanced(flat, n, p, labels),
        }
        .map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[pyo3(signature = (beta, kernel_name="laplace"))]
    fn evaluate(&self, beta: Vec<f64>, kernel_name: &str) -> PyResult<f64> {
        Ok(self.value_and_gradient(beta, kernel_name)?.0)
    }

    #[pyo3(signature = (beta, kernel_name="laplace"))]
    fn gradient(&self, beta: Vec<f64>, kernel_name: &str) -> PyResult<Vec<f64>> {
        Ok(self.value_and_gradient(beta, kernel_name)?.1)
    }

    #[pyo3(signature = (beta, kernel_name="laplace"))]
    fn value_and_gradient(&self, beta: Vec<f64>, kernel_name: &str) -> PyResult<(f64, Vec<f64>)> {
        evaluate_with_gradient(&self.inner, &beta, &kernel(kernel_name)?).map_err(py_err)
    }

    /// Copy reweighted by the fitted `P(Y = 1 - y | x_selected)`.
    fn rebalanced(&self, selected: Vec<usize>) -> PyResult<Self> {
        let (inner, _, _) =
            rebalance(&self.inner, &selected, &BoostConfig::default()).map_err(py_err)?;
        Ok(PyDataset { inner })
    }
}

#[pyclass(name = "ScreenResult", module = "metric_screen")]
pub struct PyScreenResult {
    inner: ScreenResult,
}

#[pymethods]
impl PyScreenResult {
    #[getter]
    fn selected(&self) -> Vec<usize> {
        self.inner.selected.clone()
    }

    #[getter]
    fn trajectory(&self) -> Vec<Vec<usize>> {
        self.inner.trajectory.clone()
    }

    #[getter]
    fn termination(&self) -> PyResult<String> {
        serde_json::to_value(self.inner.termination)
            .map(|v| v.as_str().unwrap_or_default().to_string())
            .map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(py_err)
    }
}

/// Screens `data`. `mode` is low, high or hier; `gamma` uses the command
/// line syntax (`permutation:N:Q`, `theory:C:T`, `fixed:G`).
#[pyfunction]
#[pyo3(signature = (data, mode="low", gamma="permutation:200:0.95", lambda_coeff=1.0, budget=10.0, kernel_name="laplace", max_selected=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn screen(
    data: PyRef<'_, PyDataset>,
    mode: &str,
    gamma: &str,
    lambda_coeff: f64,
    budget: f64,
    kernel_name: &str,
    max_selected: Option<usize>,
    seed: u64,
) -> PyResult<PyScreenResult> {
    let mode = match mode {
        "low" => ScreenMode::LowDim,
        "high" => ScreenMode::HighDim,
        "hier" => ScreenMode::Hier,
        other => {
            return Err(py_err(format!(
                "unknown mode '{other}' (low, high or hier)"
            )))
        }
    };
    let gamma: GammaArg = gamma.parse().map_err(py_err)?;
    let cfg = ScreenConfig {
        mode,
        gamma: gamma.0,
        lambda_coeff,
        budget,
        kernel: kernel(kernel_name)?,
        max_selected,
        seed,
        ..ScreenConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    let inner = run_screen(&data.inner, &cfg).map_err(py_err)?;
    Ok(PyScreenResult { inner })
}

/// Euclidean projection onto `{beta >= 0, sum(beta) <= budget}`.
#[pyfunction]
fn project(v: Vec<f64>, budget: f64) -> PyResult<Vec<f64>> {
    project_l1(&v, &ConstraintSet::new(budget)).map_err(py_err)
}

/// Draws `(features, labels)` from a named model with default parameters.
#[pyfunction]
#[pyo3(signature = (model, n, p, seed=0, rescale=true))]
fn simulate(
    model: &str,
    n: usize,
    p: usize,
    seed: u64,
    rescale: bool,
) -> PyResult<(Vec<Vec<f64>>, Vec<u8>)> {
    let spec = match model {
        "xor" => ModelSpec::xor(p),
        "qda" => ModelSpec::qda(p),
        "unequal_variance" => ModelSpec::unequal_variance(p),
        "ratio_logistic" => ModelSpec::ratio_logistic(p),
        other => return Err(py_err(format!("unknown model '{other}'"))),
    };
    spec.validate().map_err(py_err)?;
    let mut raw = generate(&spec, n, seed).map_err(py_err)?;
    if rescale {
        raw.rescale_max_abs();
    }
    let rows = raw.row_iter().map(<[f64]>::to_vec).collect();
    Ok((rows, raw.labels))
}

#[pyfunction]
fn xor_closed_form(beta1: f64, beta2: f64, c: f64) -> PyResult<f64> {
    xor_cf(beta1, beta2, c).map_err(py_err)
}

#[pyfunction]
fn distance_correlation(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    dcor(&x, &y).map_err(py_err)
}

/// Runs the built-in oracle checks; returns `(all_passed, report_json)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn oracle_check(seed: u64) -> PyResult<(bool, String)> {
    let report = run_oracle_checks(&OracleOptions {
        seed,
        ..OracleOptions::default()
    });
    let json = serde_json::to_string(&report).map_err(py_err)?;
    Ok((report.all_passed(), json))
}

#[pymodule]
#[pyo3(name = "metric_screen")]
fn py_init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyScreenResult>()?;
    m.add_function(wrap_pyfunction!(screen, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(xor_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(distance_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_names() {
        assert_eq!(kernel("laplace").unwrap(), KernelSpec::laplace());
        assert_eq!(kernel("gaussian").unwrap(), KernelSpec::gaussian());
    }
}

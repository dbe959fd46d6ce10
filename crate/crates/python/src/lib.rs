//! Python bindings: fit, apply and evaluate calibrators from Python lists.

use isocal::metrics::{evaluate, EvalOptions};
use isocal::model::{FitMeta, ModelFile};
use isocal::partition::CandidateSource;
use isocal::roc::is_roc_monotone;
use isocal::sweep::{run_sweep, write_sweep_csv, SweepOptions};
use isocal::{fit, AffineThreshold, Dataset, FitConfig, Method};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: isocal::Error) -> PyErr {
    match e {
        isocal::Error::Invariant(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn dataset(forecasts: Vec<Vec<f64>>, labels: Vec<usize>, weights: Option<Vec<f64>>) -> PyResult<Dataset> {
    Dataset::from_parts(forecasts, labels, weights).map_err(py_err)
}

fn method(name: &str) -> PyResult<Method> {
    name.parse().map_err(py_err)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A fitted calibrator.
#[pyclass(name = "Model", module = "isocal_py")]
struct PyModel {
    file: ModelFile,
}

#[pymethods]
impl PyModel {
    /// Fits `method` on forecasts (rows summing to one) and zero-based labels.
    #[staticmethod]
    #[pyo3(signature = (method_name, forecasts, labels, weights=None, alpha=1.0, max_leaves=None, lattice_step=None))]
    fn fit(
        method_name: &str,
        forecasts: Vec<Vec<f64>>,
        labels: Vec<usize>,
        weights: Option<Vec<f64>>,
        alpha: f64,
        max_leaves: Option<usize>,
        lattice_step: Option<f64>,
    ) -> PyResult<Self> {
        let ds = dataset(forecasts, labels, weights)?;
        let config = FitConfig {
            method: method(method_name)?,
            alpha,
            max_leaves,
            candidates: match lattice_step {
                Some(step) => CandidateSource::DataPointsAndLattice { step },
                None => CandidateSource::DataPoints,
            },
        };
        let model = fit(&ds, &config).map_err(py_err)?;
        let source = model.partition().map(|_| config.candidates);
        Ok(Self { file: ModelFile::new(model, FitMeta::now(ds.len(), None, source)) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { file: ModelFile::from_json(text).map_err(py_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.file.to_json().map_err(py_err)
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.file.model.method().name()
    }

    #[getter]
    fn k(&self) -> usize {
        self.file.k()
    }

    #[getter]
    fn n_bins(&self) -> usize {
        self.file.model.calibrator().n_bins()
    }

    /// Thresholds chosen by the recursive methods, in split order.
    fn introduced_thresholds(&self) -> Vec<Vec<f64>> {
        self.file
            .model
            .partition()
            .map(|p| p.introduced_thresholds().iter().map(|t| t.as_slice().to_vec()).collect())
            .unwrap_or_default()
    }

    fn calibrate(&self, forecasts: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.file.model.calibrator().calibrate(&forecasts).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(method={:?}, k={}, n_bins={})", self.method(), self.k(), self.n_bins())
    }
}

/// Synthetic forecasts on the simplex with argmax labels and label noise.
#[pyfunction]
#[pyo3(signature = (n, k, noise=0.0, seed=0))]
fn synth(n: usize, k: usize, noise: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let ds = isocal::synth_simplex(n, k, noise, seed).map_err(py_err)?;
    Ok((ds.forecasts().to_vec(), ds.labels().to_vec()))
}

/// Weighted isotonic regression; returns the fitted value of every sample.
#[pyfunction]
#[pyo3(signature = (scores, targets, weights=None))]
fn pav(scores: Vec<f64>, targets: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let w = weights.unwrap_or_else(|| vec![1.0; scores.len()]);
    Ok(isocal::pav::pav_fit(&scores, &targets, &w).map_err(py_err)?.fitted)
}

/// Metrics report as a dict.
#[pyfunction]
#[pyo3(signature = (forecasts, labels, weights=None, vus_samples=100_000, seed=0, lam=0.0))]
fn metrics<'py>(
    py: Python<'py>,
    forecasts: Vec<Vec<f64>>,
    labels: Vec<usize>,
    weights: Option<Vec<f64>>,
    vus_samples: usize,
    seed: u64,
    lam: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let w = weights.unwrap_or_else(|| vec![1.0; forecasts.len()]);
    let opts = EvalOptions { vus_samples, seed, lambda: lam, ..Default::default() };
    let report = evaluate(&forecasts, &labels, &w, &opts, &[]).map_err(py_err)?;
    let text = serde_json::to_string(&report).map_err(|e| py_err(e.into()))?;
    json_to_py(py, &text)
}

/// Whether the calibrated partitions under every threshold in `gammas` are
/// reproduced by some threshold on the raw forecasts.
#[pyfunction]
fn roc_monotone(raw: Vec<Vec<f64>>, calibrated: Vec<Vec<f64>>, gammas: Vec<Vec<f64>>) -> PyResult<bool> {
    let gammas = gammas
        .into_iter()
        .map(AffineThreshold::new)
        .collect::<isocal::Result<Vec<_>>>()
        .map_err(py_err)?;
    is_roc_monotone(&raw, &calibrated, &gammas).map_err(py_err)
}

/// Sweep CSV (method, n_bins, calibration and test metrics) as a string.
#[pyfunction]
#[pyo3(signature = (calib, test, methods=vec!["mc-irp".to_string(), "recursive-bins".to_string()], alpha=1.0, max_leaves=None, vus_samples=100_000, seed=0))]
fn sweep(
    calib: (Vec<Vec<f64>>, Vec<usize>),
    test: (Vec<Vec<f64>>, Vec<usize>),
    methods: Vec<String>,
    alpha: f64,
    max_leaves: Option<usize>,
    vus_samples: usize,
    seed: u64,
) -> PyResult<String> {
    let calib = dataset(calib.0, calib.1, None)?;
    let test = dataset(test.0, test.1, None)?;
    let opts = SweepOptions {
        methods: methods.iter().map(|m| method(m)).collect::<PyResult<_>>()?,
        alpha,
        max_leaves,
        vus_samples,
        seed,
        ..Default::default()
    };
    let rows = run_sweep(&calib, &test, &opts).map_err(py_err)?;
    let mut out = Vec::new();
    write_sweep_csv(&rows, &mut out).map_err(py_err)?;
    String::from_utf8(out).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn isocal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(pav, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(roc_monotone, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    let methods = PyDict::new(m.py());
    for meth in Method::ALL {
        methods.set_item(meth.name(), meth.binary_only())?;
    }
    m.add("BINARY_ONLY", methods)?;
    Ok(())
}

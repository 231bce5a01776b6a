//! Python bindings: plain-list surface over the core types so the module
//! works without numpy. Columns are `(name, kind)` pairs with kind
//! `"continuous"` or `"binary"`; populations are `"S"` / `"T"`.

use std::path::Path;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tllfm_core::baselines::{fit_lasso, fit_plain_lfm, fit_tl_lfm, predict_lasso, LassoConfig, LassoModel};
use tllfm_core::data::{ColumnKind, ColumnMeta, Dataset, Hyperparameters, Population, ValidateMode, DEFAULT_PRECISION_PRIOR};
use tllfm_core::error::Error;
use tllfm_core::gibbs::{ChainConfig, ModelKind, PosteriorSamples, RunHooks};
use tllfm_core::io::{load_model, read_dataset, save_model, write_dataset, ModelArtifact};
use tllfm_core::predict::{predict, PredictOptions};
use tllfm_core::simulate::{simulate, SimulationSpec, SplitRatio};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::NonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_population(label: &str) -> PyResult<Population> {
    match label.to_ascii_lowercase().as_str() {
        "s" | "source" => Ok(Population::Source),
        "t" | "target" => Ok(Population::Target),
        other => Err(PyValueError::new_err(format!(
            "population must be 'source' or 'target', got {other:?}"
        ))),
    }
}

fn parse_kind(label: &str) -> PyResult<ColumnKind> {
    match label.to_ascii_lowercase().as_str() {
        "continuous" => Ok(ColumnKind::Continuous),
        "binary" => Ok(ColumnKind::Binary),
        other => Err(PyValueError::new_err(format!(
            "column kind must be 'continuous' or 'binary', got {other:?}"
        ))),
    }
}

/// In-memory dataset: covariate matrix, optional binary outcome, and a
/// source/target label per row.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (columns, rows, populations, y=None))]
    fn new(
        columns: Vec<(String, String)>,
        rows: Vec<Vec<f64>>,
        populations: Vec<String>,
        y: Option<Vec<u8>>,
    ) -> PyResult<Self> {
        let metas = columns
            .into_iter()
            .map(|(name, kind)| Ok(ColumnMeta { name, kind: parse_kind(&kind)? }))
            .collect::<PyResult<Vec<_>>>()?;
        let p = metas.len();
        let n = rows.len();
        let mut x = Array2::<f64>::zeros((n, p));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(PyValueError::new_err(format!(
                    "row {i} has {} values, expected {p}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        let pops = populations
            .iter()
            .map(|s| parse_population(s))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyDataset { inner: Dataset::new(metas, x, y, pops).map_err(to_py)? })
    }

    /// Read the CSV/sidecar pair. `mode` controls validation:
    /// "scoring", "fit-pooled", or "fit-hierarchical".
    #[staticmethod]
    #[pyo3(signature = (path, mode="fit-hierarchical"))]
    fn read_csv(path: &str, mode: &str) -> PyResult<Self> {
        let mode = match mode {
            "scoring" => ValidateMode::Scoring,
            "fit-pooled" => ValidateMode::FitPooled,
            "fit-hierarchical" => ValidateMode::FitHierarchical,
            other => {
                return Err(PyValueError::new_err(format!(
                    "mode must be scoring, fit-pooled, or fit-hierarchical, got {other:?}"
                )))
            }
        };
        Ok(PyDataset { inner: read_dataset(Path::new(path), mode).map_err(to_py)? })
    }

    /// Write the CSV and its metadata sidecar.
    fn write_csv(&self, path: &str) -> PyResult<()> {
        write_dataset(&self.inner, Path::new(path)).map_err(to_py)
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn n_covariates(&self) -> usize {
        self.inner.n_covariates()
    }

    fn column_names(&self) -> Vec<String> {
        self.inner.columns().iter().map(|c| c.name.clone()).collect()
    }

    fn populations(&self) -> Vec<String> {
        self.inner
            .populations()
            .iter()
            .map(|p| p.label().to_string())
            .collect()
    }

    fn y(&self) -> Option<Vec<u32>> {
        // u32 keeps the Python side a list of ints (Vec<u8> maps to bytes).
        self.inner.y().map(|y| y.iter().map(|&v| u32::from(v)).collect())
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.n_rows() {
            return Err(PyValueError::new_err(format!(
                "row {i} out of range for {} rows",
                self.inner.n_rows()
            )));
        }
        Ok(self.inner.x().row(i).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} rows, {} covariates, outcome: {})",
            self.inner.n_rows(),
            self.inner.n_covariates(),
            self.inner.y().is_some()
        )
    }
}

/// Posterior samples from a fitted factor model (hierarchical or pooled).
#[pyclass(name = "Posterior")]
struct PyPosterior {
    inner: PosteriorSamples,
}

#[pymethods]
impl PyPosterior {
    /// Posterior-predictive outcome probabilities for each row.
    #[pyo3(signature = (dataset, population="target"))]
    fn predict(&self, dataset: &PyDataset, population: &str) -> PyResult<Vec<f64>> {
        let pop = parse_population(population)?;
        predict(&self.inner, &dataset.inner, pop, &PredictOptions::default())
            .map(|r| r.prob)
            .map_err(to_py)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn interrupted(&self) -> bool {
        self.inner.interrupted
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.kind {
            ModelKind::Hierarchical => "tl-lfm",
            ModelKind::Pooled => "lfm",
        }
    }

    #[getter]
    fn n_factors(&self) -> usize {
        self.inner.hyper.n_factors
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&ModelArtifact::Posterior(self.inner.clone()), Path::new(path)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Posterior(kind={}, k={}, states={})",
            self.kind(),
            self.inner.hyper.n_factors,
            self.inner.n_states()
        )
    }
}

/// Cross-validated logistic lasso baseline.
#[pyclass(name = "Lasso")]
struct PyLasso {
    inner: LassoModel,
}

#[pymethods]
impl PyLasso {
    fn predict(&self, dataset: &PyDataset) -> PyResult<Vec<f64>> {
        predict_lasso(&self.inner, &dataset.inner).map_err(to_py)
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn n_nonzero(&self) -> usize {
        self.inner.weights.iter().filter(|&&w| w != 0.0).count()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&ModelArtifact::Lasso(self.inner.clone()), Path::new(path)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Lasso(lambda={:.4e}, nonzero={})", self.inner.lambda, self.n_nonzero())
    }
}

fn build_hyper(
    k: usize,
    iters: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
    phi: f64,
    phi_s: f64,
    phi_t: f64,
    v: f64,
    learn_phi: bool,
) -> Hyperparameters {
    Hyperparameters {
        n_factors: k,
        global_precision: phi,
        source_precision: phi_s,
        target_precision: phi_t,
        noise_df: v,
        precision_prior: learn_phi.then_some(DEFAULT_PRECISION_PRIOR),
        iters,
        burnin,
        thin,
        seed,
    }
}

/// Fit the hierarchical transfer-learning factor model.
#[pyfunction(name = "fit_tl_lfm")]
#[pyo3(signature = (dataset, k=20, iters=3000, burnin=1000, thin=2, seed=0,
                    phi=1.0, phi_s=1.0, phi_t=1.0, v=2.0, learn_phi=false))]
#[allow(clippy::too_many_arguments)]
fn fit_tl_lfm_py(
    py: Python<'_>,
    dataset: &PyDataset,
    k: usize,
    iters: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
    phi: f64,
    phi_s: f64,
    phi_t: f64,
    v: f64,
    learn_phi: bool,
) -> PyResult<PyPosterior> {
    let hyper = build_hyper(k, iters, burnin, thin, seed, phi, phi_s, phi_t, v, learn_phi);
    let config = ChainConfig::from_hyper(&hyper);
    let dataset = dataset.inner.clone();
    let inner = py
        .detach(|| fit_tl_lfm(&dataset, &hyper, &config, &RunHooks::default()))
        .map_err(to_py)?;
    Ok(PyPosterior { inner })
}

/// Fit the pooled (single-population) factor model baseline.
#[pyfunction(name = "fit_lfm")]
#[pyo3(signature = (dataset, k=20, iters=3000, burnin=1000, thin=2, seed=0, phi=1.0, v=2.0))]
#[allow(clippy::too_many_arguments)]
fn fit_lfm_py(
    py: Python<'_>,
    dataset: &PyDataset,
    k: usize,
    iters: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
    phi: f64,
    v: f64,
) -> PyResult<PyPosterior> {
    let hyper = build_hyper(k, iters, burnin, thin, seed, phi, 1.0, 1.0, v, false);
    let config = ChainConfig::from_hyper(&hyper);
    let dataset = dataset.inner.clone();
    let inner = py
        .detach(|| fit_plain_lfm(&dataset, &hyper, &config, &RunHooks::default()))
        .map_err(to_py)?;
    Ok(PyPosterior { inner })
}

/// Fit the cross-validated logistic lasso baseline.
#[pyfunction(name = "fit_lasso")]
#[pyo3(signature = (dataset, seed=0, folds=5, n_lambda=50))]
fn fit_lasso_py(
    py: Python<'_>,
    dataset: &PyDataset,
    seed: u64,
    folds: usize,
    n_lambda: usize,
) -> PyResult<PyLasso> {
    let config = LassoConfig { seed, folds, n_lambda, ..LassoConfig::default() };
    let dataset = dataset.inner.clone();
    let inner = py.detach(|| fit_lasso(&dataset, &config)).map_err(to_py)?;
    Ok(PyLasso { inner })
}

/// Area under the ROC curve; labels are 0/1.
#[pyfunction(name = "auroc")]
fn auroc_py(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    tllfm_core::auroc(&scores, &labels).map_err(to_py)
}

/// Draw one benchmark cohort. Returns
/// `(train, test_target, test_source, source_test_regenerated)`.
#[pyfunction(name = "simulate")]
#[pyo3(signature = (ratio, seed=0, n_total=5000, n_target=1000, p=70, k_true=20, spread=1.0))]
#[allow(clippy::too_many_arguments)]
fn simulate_py(
    py: Python<'_>,
    ratio: &str,
    seed: u64,
    n_total: usize,
    n_target: usize,
    p: usize,
    k_true: usize,
    spread: f64,
) -> PyResult<(PyDataset, PyDataset, PyDataset, bool)> {
    let spec = SimulationSpec {
        n_total,
        n_target,
        p_latent: p,
        k_true,
        ratio: SplitRatio::parse(ratio).map_err(to_py)?,
        seed,
        loading_spread: spread,
    };
    let (_truth, data) = py.detach(|| simulate(&spec)).map_err(to_py)?;
    Ok((
        PyDataset { inner: data.train },
        PyDataset { inner: data.test_target },
        PyDataset { inner: data.test_source },
        data.source_test_regenerated,
    ))
}

/// Load a saved model file; returns a `Posterior` or a `Lasso`.
#[pyfunction(name = "load_model")]
fn load_model_py(py: Python<'_>, path: &str) -> PyResult<Py<PyAny>> {
    match load_model(Path::new(path)).map_err(to_py)? {
        ModelArtifact::Posterior(inner) => Ok(Py::new(py, PyPosterior { inner })?.into_any()),
        ModelArtifact::Lasso(inner) => Ok(Py::new(py, PyLasso { inner })?.into_any()),
    }
}

#[pymodule]
fn tllfm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PyLasso>()?;
    m.add_function(wrap_pyfunction!(fit_tl_lfm_py, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lfm_py, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lasso_py, m)?)?;
    m.add_function(wrap_pyfunction!(auroc_py, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_py, m)?)?;
    m.add_function(wrap_pyfunction!(load_model_py, m)?)?;
    Ok(())
}

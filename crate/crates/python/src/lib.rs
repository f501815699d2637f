//! Python bindings.
//!
//! Matrices cross the boundary as lists of rows. Data matrices are lists of
//! samples (one inner list per sample), and labels are zero-based.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sadl::classify::{evaluate, Classifier, FusedClassifier, Predictor};
use sadl::cli::{load_model, save_model, CliError, Preprocess};
use sadl::data::{self, CoefficientDist, LabeledDataset, SynthConfig};
use sadl::distributed::train_dsadl;
use sadl::solver;
use sadl::{DataMatrix, DistHyperparams, Hyperparams, Mat, ModelState, Problem, SadlError, Vector};

create_exception!(sadl_py, NumericalError, PyArithmeticError);

fn to_py(e: SadlError) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(format!("{}: {e}", e.kind()))
    } else {
        PyValueError::new_err(format!("{}: {e}", e.kind()))
    }
}

fn cli_to_py(e: CliError) -> PyErr {
    match e {
        CliError::Sadl(e) => to_py(e),
        CliError::Usage(m) => PyValueError::new_err(m),
    }
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Samples-as-rows list to a `features × samples` data matrix.
fn samples(x: &[Vec<f64>]) -> PyResult<DataMatrix> {
    DataMatrix::new(from_rows(x)?.transpose()).map_err(to_py)
}

fn labeled(x: &[Vec<f64>], labels: Vec<usize>) -> PyResult<LabeledDataset> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    LabeledDataset::new(samples(x)?, labels, classes).map_err(to_py)
}

fn full_problem(data: &LabeledDataset, structure_rows: Option<usize>) -> PyResult<Problem> {
    let h = data::build_structure_target(&data.labels, data.class_count, None, structure_rows)
        .map_err(to_py)?;
    let y = data::one_hot_labels(&data.labels, data.class_count).map_err(to_py)?;
    Problem::new(&data.x, &h, &y).map_err(to_py)
}

/// A trained `(Ω, Q, W)` model.
#[pyclass(name = "Model", module = "sadl_py")]
pub struct PyModel {
    inner: Classifier,
    pre: Preprocess,
}

impl PyModel {
    fn new(inner: Classifier) -> Self {
        let pre = Preprocess::identity(inner.omega.ncols());
        PyModel { inner, pre }
    }

    fn prepared(&self, x: &[Vec<f64>]) -> PyResult<DataMatrix> {
        self.pre.apply(&samples(x)?).map_err(cli_to_py)
    }
}

#[pymethods]
impl PyModel {
    #[new]
    fn py_new(omega: Vec<Vec<f64>>, q: Vec<Vec<f64>>, w: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = Classifier::new(from_rows(&omega)?, from_rows(&q)?, from_rows(&w)?)
            .map_err(to_py)?;
        Ok(PyModel::new(inner))
    }

    /// Reads a model directory written by the command-line tool or `save`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let loaded = load_model(&path).map_err(cli_to_py)?;
        Ok(PyModel { inner: loaded.classifier, pre: loaded.pre })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.inner, &self.pre, 0).map_err(cli_to_py)
    }

    #[getter]
    fn omega(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.omega)
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.q)
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.w)
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.w.nrows()
    }

    #[getter]
    fn features(&self) -> usize {
        self.pre.input_features
    }

    /// `WQΩ` as one `classes × features` matrix.
    fn fused(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.fused())
    }

    /// Zero-based predicted class of every sample.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let data = self.prepared(&x)?;
        let fast = FusedClassifier::new(&self.inner);
        data.as_matrix()
            .column_iter()
            .map(|c| fast.predict(&c.into_owned()).map_err(to_py))
            .collect()
    }

    /// Per-class scores, one list per sample.
    fn scores(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let data = self.prepared(&x)?;
        let s = self.inner.score_matrix(data.as_matrix()).map_err(to_py)?;
        Ok(to_rows(&s.transpose()))
    }

    /// Accuracy, confusion matrix and mean per-sample time.
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        x: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let data = self.prepared(&x)?;
        let report = evaluate(&FusedClassifier::new(&self.inner), &data, &labels).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("accuracy", report.accuracy)?;
        out.set_item("predicted", report.predicted)?;
        out.set_item("confusion", report.confusion)?;
        out.set_item("seconds_per_sample", report.seconds_per_sample)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(features={}, atoms={}, structure_rows={}, classes={})",
            self.inner.features(),
            self.inner.omega.nrows(),
            self.inner.q.nrows(),
            self.inner.classes()
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn hyperparams(
    lambda1: f64,
    lambda2: f64,
    rho1: f64,
    rho2: f64,
    delta1: f64,
    delta2: f64,
    mu: Option<f64>,
    iters: usize,
    tol: f64,
) -> PyResult<Hyperparams> {
    let h = Hyperparams {
        lambda1,
        lambda2,
        rho1,
        rho2,
        delta1,
        delta2,
        mu,
        max_iter: iters,
        tol,
        ..Hyperparams::default()
    };
    h.validate().map_err(to_py)?;
    Ok(h)
}

/// Union-of-subspaces benchmark split 50/50. Returns a dict with
/// `train_x`, `train_labels`, `test_x`, `test_labels`.
#[pyfunction]
#[pyo3(signature = (classes=3, subspace_dim=5, ambient_dim=60, n_per_class=100, noise_sigma=0.05, seed=42, folded=true))]
#[allow(clippy::too_many_arguments)]
fn synth<'py>(
    py: Python<'py>,
    classes: usize,
    subspace_dim: usize,
    ambient_dim: usize,
    n_per_class: usize,
    noise_sigma: f64,
    seed: u64,
    folded: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SynthConfig {
        classes,
        subspace_dim,
        ambient_dim,
        n_per_class,
        noise_sigma,
        coefficients: if folded { CoefficientDist::FoldedNormal } else { CoefficientDist::Normal },
        seed,
    };
    let (train, test) = data::synth_dataset(&cfg).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("train_x", to_rows(&train.x.as_matrix().transpose()))?;
    out.set_item("train_labels", train.labels)?;
    out.set_item("test_x", to_rows(&test.x.as_matrix().transpose()))?;
    out.set_item("test_labels", test.labels)?;
    Ok(out)
}

/// Centralized training. Returns `(model, lagrangian_per_iteration)`.
#[pyfunction]
#[pyo3(signature = (x, labels, *, atoms=None, structure_rows=None, lambda1=0.001, lambda2=0.005, rho1=1.0, rho2=1.0, delta1=1.0, delta2=1.0, mu=None, iters=300, tol=1e-6, seed=42))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    labels: Vec<usize>,
    atoms: Option<usize>,
    structure_rows: Option<usize>,
    lambda1: f64,
    lambda2: f64,
    rho1: f64,
    rho2: f64,
    delta1: f64,
    delta2: f64,
    mu: Option<f64>,
    iters: usize,
    tol: f64,
    seed: u64,
) -> PyResult<(PyModel, Vec<f64>)> {
    let data = labeled(&x, labels)?;
    let problem = full_problem(&data, structure_rows)?;
    let hyper = hyperparams(lambda1, lambda2, rho1, rho2, delta1, delta2, mu, iters, tol)?;
    let init = ModelState::init(problem.dims(atoms.unwrap_or(data.x.features())), seed);
    let (state, trace) = py
        .detach(|| solver::train_sadl(&problem, init, &hyper))
        .map_err(to_py)?;
    let curve = trace.records.iter().map(|r| r.lagrangian).collect();
    Ok((PyModel::new(Classifier::from_state(&state)), curve))
}

/// Consensus-distributed training over `clusters` column shards.
#[pyfunction]
#[pyo3(signature = (x, labels, *, clusters=2, atoms=None, structure_rows=None, lambda1=0.001, lambda2=0.005, rho1=1.0, rho2=1.0, delta1=1.0, delta2=1.0, mu=None, iters=300, tol=1e-6, xi=0.1, growth_rho=1.01, seed=0, threads=0))]
#[allow(clippy::too_many_arguments)]
fn train_distributed(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    labels: Vec<usize>,
    clusters: usize,
    atoms: Option<usize>,
    structure_rows: Option<usize>,
    lambda1: f64,
    lambda2: f64,
    rho1: f64,
    rho2: f64,
    delta1: f64,
    delta2: f64,
    mu: Option<f64>,
    iters: usize,
    tol: f64,
    xi: f64,
    growth_rho: f64,
    seed: u64,
    threads: usize,
) -> PyResult<PyModel> {
    let data = labeled(&x, labels)?;
    let problem = full_problem(&data, structure_rows)?;
    let base = hyperparams(lambda1, lambda2, rho1, rho2, delta1, delta2, mu, iters, tol)?;
    let dist = DistHyperparams {
        mu_max: 10.0 * base.mu(),
        base,
        n_clusters: clusters,
        xi1: xi,
        xi2: xi,
        xi3: xi,
        growth_rho,
        seed,
        threads,
        ..DistHyperparams::default()
    };
    let r = atoms.unwrap_or(data.x.features());
    let out = py.detach(|| train_dsadl(&problem, r, &dist)).map_err(to_py)?;
    let g = out.globals;
    Ok(PyModel::new(Classifier::new(g.omega, g.q, g.w).map_err(to_py)?))
}

/// Entrywise `sign(v)·max(|v| − theta, 0)`.
#[pyfunction]
fn soft_threshold(m: Vec<Vec<f64>>, theta: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&solver::soft_threshold(&from_rows(&m)?, theta)))
}

/// Block-diagonal structure target `H` as a list of rows.
#[pyfunction]
#[pyo3(signature = (labels, classes, rows_per_class=None, s=None))]
fn build_structure_target(
    labels: Vec<usize>,
    classes: usize,
    rows_per_class: Option<Vec<usize>>,
    s: Option<usize>,
) -> PyResult<Vec<Vec<f64>>> {
    let h = data::build_structure_target(&labels, classes, rows_per_class.as_deref(), s)
        .map_err(to_py)?;
    Ok(to_rows(h.as_matrix()))
}

/// Seeded Gaussian projection with unit-norm rows, applied to every sample.
#[pyfunction]
fn random_projection(x: Vec<Vec<f64>>, dim: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let p = data::random_projection(&samples(&x)?, dim, seed).map_err(to_py)?;
    Ok(to_rows(&p.as_matrix().transpose()))
}

/// Closed-form dictionary `UXᵀ(XXᵀ + λ2 I)⁻¹`; `u` and `x` are lists of rows.
#[pyfunction]
fn update_omega(u: Vec<Vec<f64>>, x: Vec<Vec<f64>>, lambda2: f64) -> PyResult<Vec<Vec<f64>>> {
    let omega = solver::update_omega(&from_rows(&u)?, &from_rows(&x)?, lambda2).map_err(to_py)?;
    Ok(to_rows(&omega))
}

/// Index of the largest entry, ties to the lowest index.
#[pyfunction]
fn argmax(v: Vec<f64>) -> PyResult<usize> {
    if v.is_empty() {
        return Err(PyValueError::new_err("empty vector"));
    }
    Ok(sadl::classify::argmax(&Vector::from_vec(v)))
}

#[pymodule]
fn sadl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(train_distributed, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(build_structure_target, m)?)?;
    m.add_function(wrap_pyfunction!(random_projection, m)?)?;
    m.add_function(wrap_pyfunction!(update_omega, m)?)?;
    m.add_function(wrap_pyfunction!(argmax, m)?)?;
    Ok(())
}

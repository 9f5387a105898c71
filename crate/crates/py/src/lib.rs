//! Python bindings: sfunc evaluation, networks, MNIST loading and single training runs.
//!
//! Matrices cross the boundary as lists of row lists (`list[list[float]]`).

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use skan::harness::{self, Optimizer, RunRecord, TrainConfig};
use skan::{Checkpoint, Dataset, Matrix, SFuncKind, SkanError, SkanNetwork};

fn to_py_err(e: SkanError) -> PyErr {
    match e {
        SkanError::Io(_) => PyIOError::new_err(e.to_string()),
        SkanError::Internal(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_kind(name: &str) -> PyResult<SFuncKind> {
    name.parse().map_err(to_py_err)
}

fn parse_optimizer(name: &str) -> PyResult<Optimizer> {
    match name.to_ascii_lowercase().as_str() {
        "adam" => Ok(Optimizer::Adam),
        "sgd" => Ok(Optimizer::Sgd),
        _ => Err(PyValueError::new_err(format!("unknown optimizer {name:?} (expected adam or sgd)"))),
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix, SkanError> {
    Matrix::from_rows(rows)
}

fn labels_from(labels: &[i64]) -> PyResult<Vec<u8>> {
    labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| PyValueError::new_err(format!("label {l} out of range"))))
        .collect()
}

/// Evaluate `kind` at `(k, x)`.
#[pyfunction]
fn sfunc_eval(kind: &str, k: f64, x: f64) -> PyResult<f64> {
    skan::sfunc_eval(parse_kind(kind)?, k, x).map_err(to_py_err)
}

/// Partial derivatives `(d/dk, d/dx)` of `kind` at `(k, x)`.
#[pyfunction]
fn sfunc_grad(kind: &str, k: f64, x: f64) -> PyResult<(f64, f64)> {
    skan::sfunc_grad(parse_kind(kind)?, k, x).map_err(to_py_err)
}

#[pyfunction]
fn sfunc_kinds() -> Vec<&'static str> {
    SFuncKind::ALL.iter().map(|k| k.name()).collect()
}

#[pyfunction]
fn default_lr_grid() -> Vec<f64> {
    skan::default_lr_grid()
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
#[pyfunction]
fn softmax_cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let logits = matrix_from_rows(&logits).map_err(to_py_err)?;
    let (loss, grad) = skan::softmax_cross_entropy(&logits, &labels_from(&labels)?).map_err(to_py_err)?;
    Ok((loss, grad.to_rows()))
}

#[pyclass(name = "Network", module = "skan_py")]
pub struct PyNetwork {
    inner: SkanNetwork,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (arch, kind, seed = 0))]
    fn new(arch: Vec<usize>, kind: &str, seed: u64) -> PyResult<Self> {
        let inner = SkanNetwork::init(&arch, parse_kind(kind)?, seed).map_err(to_py_err)?;
        Ok(PyNetwork { inner })
    }

    #[staticmethod]
    fn from_params(kind: &str, params: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let mats = params.iter().map(|p| matrix_from_rows(p)).collect::<Result<Vec<_>, _>>().map_err(to_py_err)?;
        let inner = SkanNetwork::from_params(parse_kind(kind)?, mats).map_err(to_py_err)?;
        Ok(PyNetwork { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = Checkpoint::load(path).and_then(Checkpoint::into_network).map_err(to_py_err)?;
        Ok(PyNetwork { inner })
    }

    #[pyo3(signature = (path, seed = None))]
    fn save(&self, path: &str, seed: Option<u64>) -> PyResult<()> {
        self.inner.to_checkpoint(seed).save(path).map_err(to_py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn arch(&self) -> Vec<usize> {
        self.inner.arch()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// Parameter matrices, one `outputs x inputs` list per layer.
    fn params(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.params().iter().map(|m| m.to_rows()).collect()
    }

    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix_from_rows(&x).map_err(to_py_err)?;
        Ok(self.inner.logits(&x).map_err(to_py_err)?.to_rows())
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let x = matrix_from_rows(&x).map_err(to_py_err)?;
        self.inner.predict(&x).map_err(to_py_err)
    }

    /// Loss and per-layer parameter gradients for one batch.
    fn loss_and_grads(&self, x: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<(f64, Vec<Vec<Vec<f64>>>)> {
        let x = matrix_from_rows(&x).map_err(to_py_err)?;
        let labels = labels_from(&labels)?;
        let (logits, tape) = self.inner.forward(&x).map_err(to_py_err)?;
        let (loss, d_logits) = skan::softmax_cross_entropy(&logits, &labels).map_err(to_py_err)?;
        let grads = self.inner.backward(&tape, &d_logits).map_err(to_py_err)?;
        Ok((loss, grads.iter().map(Matrix::to_rows).collect()))
    }

    fn evaluate(&self, dataset: &PyDataset) -> PyResult<(f64, f64)> {
        let e = harness::evaluate(&self.inner, &dataset.inner).map_err(to_py_err)?;
        Ok((e.loss, e.accuracy))
    }

    fn __repr__(&self) -> String {
        format!("Network(kind={:?}, arch={:?})", self.inner.kind().name(), self.inner.arch())
    }
}

#[pyclass(name = "Dataset", module = "skan_py")]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(images: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<Self> {
        let images = matrix_from_rows(&images).map_err(to_py_err)?;
        let inner = Dataset::new(images, labels_from(&labels)?).map_err(to_py_err)?;
        Ok(PyDataset { inner })
    }

    #[pyo3(signature = (n, seed = 0))]
    fn subset(&self, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset { inner: self.inner.subset(n, seed).map_err(to_py_err)? })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.labels().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Load `(train, test)` datasets from a directory of MNIST IDX files.
#[pyfunction]
fn load_mnist(py: Python<'_>, dir: &str) -> PyResult<(PyDataset, PyDataset)> {
    let mnist = py.detach(|| skan::load_mnist(dir)).map_err(to_py_err)?;
    Ok((PyDataset { inner: mnist.train }, PyDataset { inner: mnist.test }))
}

fn record_to_dict<'py>(py: Python<'py>, rec: &RunRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("kind", rec.kind.name())?;
    d.set_item("lr", rec.lr)?;
    d.set_item("seed", rec.seed)?;
    let epochs = PyList::empty(py);
    for e in &rec.epochs {
        let ed = PyDict::new(py);
        ed.set_item("epoch", e.epoch)?;
        ed.set_item("train_loss", e.train_loss)?;
        ed.set_item("test_loss", e.test_loss)?;
        ed.set_item("test_accuracy", e.test_accuracy)?;
        ed.set_item("epoch_seconds", e.epoch_seconds)?;
        epochs.append(ed)?;
    }
    d.set_item("epochs", epochs)?;
    match &rec.divergence {
        Some(div) => {
            let dd = PyDict::new(py);
            dd.set_item("epoch", div.epoch)?;
            dd.set_item("train_loss", div.train_loss)?;
            dd.set_item("epoch_seconds", div.epoch_seconds)?;
            d.set_item("divergence", dd)?;
        }
        None => d.set_item("divergence", py.None())?,
    }
    Ok(d)
}

/// Train one network; returns `(record_dict, network)`.
#[pyfunction]
#[pyo3(signature = (kind, lr, train, test, seed = 0, epochs = 30, batch = 64, arch = None, optimizer = "adam"))]
#[allow(clippy::too_many_arguments)]
fn train_run<'py>(
    py: Python<'py>,
    kind: &str,
    lr: f64,
    train: PyRef<'py, PyDataset>,
    test: PyRef<'py, PyDataset>,
    seed: u64,
    epochs: usize,
    batch: usize,
    arch: Option<Vec<usize>>,
    optimizer: &str,
) -> PyResult<(Bound<'py, PyDict>, PyNetwork)> {
    let mut cfg = TrainConfig::new(parse_kind(kind)?, lr, seed);
    cfg.epochs = epochs;
    cfg.batch = batch;
    cfg.optimizer = parse_optimizer(optimizer)?;
    if let Some(arch) = arch {
        cfg.arch = arch;
    }
    let (train_ds, test_ds) = (&train.inner, &test.inner);
    let outcome = py.detach(|| harness::train(&cfg, train_ds, test_ds, |_| {})).map_err(to_py_err)?;
    Ok((record_to_dict(py, &outcome.record)?, PyNetwork { inner: outcome.network }))
}

#[pymodule]
fn skan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sfunc_eval, m)?)?;
    m.add_function(wrap_pyfunction!(sfunc_grad, m)?)?;
    m.add_function(wrap_pyfunction!(sfunc_kinds, m)?)?;
    m.add_function(wrap_pyfunction!(default_lr_grid, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(load_mnist, m)?)?;
    m.add_function(wrap_pyfunction!(train_run, m)?)?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyDataset>()?;
    Ok(())
}

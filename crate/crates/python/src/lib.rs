//! Python bindings for `robord`.
//!
//! Labels are 1-based on both sides of the boundary. Reports cross over as
//! JSON strings so Python callers can load them with the `json` module.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use robord::data::{standardize, LabelColumn};
use robord::harness::{Correction, DataSource};
use robord::linalg::SquareMatrix;
use robord::noise_estimation::write_estimate;
use robord::{
    build_noise_matrix, corrected_loss, estimate_matrix, generate_synth, loss_ce, loss_imc, loss_mae,
    matrix_error, run_experiment, train_multiclass, Activation, BaseLoss, EstimationConfig, ExperimentPlan,
    LossSpec, NoiseSpec, SynthSpec, Thresholds, TrainConfig, Variant,
};

create_exception!(robord_py, RobordError, PyException, "Raised for any error reported by robord.");

fn err(e: robord::Error) -> PyErr {
    RobordError::new_err(format!("{}: {e}", e.kind()))
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for robord::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn parse_base(name: &str) -> PyResult<BaseLoss> {
    BaseLoss::parse(name).py_err()
}

/// Row-stochastic label transition matrix together with its inverse.
#[pyclass(name = "NoiseMatrix", module = "robord_py", frozen)]
#[derive(Clone)]
struct PyNoiseMatrix {
    inner: robord::NoiseMatrix,
}

#[pymethods]
impl PyNoiseMatrix {
    /// Inversely decaying noise with one flip rate shared by every class.
    #[staticmethod]
    fn uniform(k: usize, rho: f64) -> PyResult<Self> {
        Self::build(&NoiseSpec::uniform(k, rho))
    }

    /// Inversely decaying noise with a flip rate per true class.
    #[staticmethod]
    fn class_conditional(rho: Vec<f64>) -> PyResult<Self> {
        Self::build(&NoiseSpec::class_conditional(rho))
    }

    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let m = SquareMatrix::from_rows(&rows).py_err()?;
        Self::build(&NoiseSpec::explicit(m))
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = robord::NoiseMatrix::parse_text(text).py_err()?.invert().py_err()?;
        Ok(Self { inner })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn entries(&self) -> Vec<Vec<f64>> {
        self.inner.entries().to_rows()
    }

    #[getter]
    fn inverse(&self) -> Vec<Vec<f64>> {
        self.inner.inverse().map(SquareMatrix::to_rows).unwrap_or_default()
    }

    /// Max absolute row sum of the inverse.
    fn lipschitz_inflation(&self) -> PyResult<f64> {
        self.inner.lipschitz_inflation().py_err()
    }

    fn corrupt(&self, labels: Vec<usize>, seed: u64) -> PyResult<Vec<usize>> {
        self.inner.corrupt_labels(&labels, seed).py_err()
    }

    /// `(max_abs, frobenius)` distance to another matrix.
    fn distance(&self, other: &PyNoiseMatrix) -> PyResult<(f64, f64)> {
        matrix_error(&self.inner, &other.inner).py_err()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("NoiseMatrix(k={})", self.inner.k())
    }
}

impl PyNoiseMatrix {
    fn build(spec: &NoiseSpec) -> PyResult<Self> {
        let inner = build_noise_matrix(spec).py_err()?.invert().py_err()?;
        Ok(Self { inner })
    }
}

/// Feature rows with 1-based ordinal labels.
#[pyclass(name = "Dataset", module = "robord_py", frozen)]
#[derive(Clone)]
struct PyDataset {
    inner: robord::OrdinalDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> PyResult<Self> {
        let inner = robord::OrdinalDataset::from_rows(&rows, labels, k).py_err()?;
        Ok(Self { inner })
    }

    /// Linearly separable synthetic data.
    #[staticmethod]
    #[pyo3(signature = (n=2500, d=2, k=5, seed=0))]
    fn synth(n: usize, d: usize, k: usize, seed: u64) -> PyResult<Self> {
        let inner = generate_synth(&SynthSpec::with_shape(n, d, k, seed)).py_err()?;
        Ok(Self { inner })
    }

    /// `label_column` is a header name, a 0-based index, or `"last"`.
    #[staticmethod]
    #[pyo3(signature = (path, k, label_column="last"))]
    fn from_csv(path: PathBuf, k: usize, label_column: &str) -> PyResult<Self> {
        let inner = robord::load_csv(&path, &LabelColumn::parse(label_column), k).py_err()?;
        Ok(Self { inner })
    }

    fn with_labels(&self, labels: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_labels(labels).py_err()?,
        })
    }

    /// Z-scores features with this dataset's own statistics.
    fn standardized(&self) -> PyResult<Self> {
        let (inner, _) = standardize(&self.inner, &[]).py_err()?;
        Ok(Self { inner })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, d={}, k={})", self.inner.len(), self.inner.dim(), self.inner.k())
    }
}

/// Scalar score network plus `K - 1` thresholds.
#[pyclass(name = "OrdinalModel", module = "robord_py")]
#[derive(Clone)]
struct PyOrdinalModel {
    inner: robord::OrdinalModel,
}

#[pymethods]
impl PyOrdinalModel {
    #[new]
    #[pyo3(signature = (input_dim, k, hidden=vec![16], activation="relu", seed=0))]
    fn new(input_dim: usize, k: usize, hidden: Vec<usize>, activation: &str, seed: u64) -> PyResult<Self> {
        let act = Activation::parse(activation).py_err()?;
        let inner = robord::OrdinalModel::new(input_dim, k, &hidden, act, seed).py_err()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: robord::OrdinalModel::load(&path).py_err()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py_err()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds().as_slice().to_vec()
    }

    fn score(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.score(&x).py_err()
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.predict(&x).py_err()
    }

    fn predict_all(&self, data: &PyDataset) -> PyResult<Vec<usize>> {
        self.inner.predict_all(&data.inner).py_err()
    }

    /// `(mae, zero_one)` against the dataset's labels.
    fn evaluate(&self, data: &PyDataset) -> PyResult<(f64, f64)> {
        let m = robord::evaluate(&self.inner, &data.inner).py_err()?;
        Ok((m.mae, m.zero_one))
    }

    fn __repr__(&self) -> String {
        format!("OrdinalModel(k={}, input_dim={})", self.inner.k(), self.inner.input_dim())
    }
}

/// Result of `train`.
#[pyclass(name = "TrainResult", module = "robord_py", frozen, get_all)]
struct PyTrainResult {
    model: Py<PyOrdinalModel>,
    loss_curve: Vec<f64>,
    total_updates: u64,
    unordered_updates: u64,
    final_ordered: bool,
}

fn loss_spec(loss: &str, correction: Option<&PyNoiseMatrix>) -> PyResult<LossSpec> {
    let base = parse_base(loss)?;
    match correction {
        None => Ok(LossSpec::plain(base)),
        Some(m) => {
            let inv = m
                .inner
                .inverse()
                .ok_or_else(|| RobordError::new_err("noise matrix has no inverse"))?;
            LossSpec::corrected(base, inv.clone()).py_err()
        }
    }
}

/// Trains a fresh model. Passing `correction` switches to the corrected loss
/// built from that matrix's inverse.
#[pyfunction]
#[pyo3(signature = (
    data, loss="ce", correction=None, epochs=300, lr=0.01, batch_size=32,
    weight_decay=0.01, hidden=vec![16], activation="relu", seed=0
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: &PyDataset,
    loss: &str,
    correction: Option<&PyNoiseMatrix>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    weight_decay: f64,
    hidden: Vec<usize>,
    activation: &str,
    seed: u64,
) -> PyResult<PyTrainResult> {
    let cfg = TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size,
        weight_decay,
        seed,
        loss: loss_spec(loss, correction)?,
        hidden_sizes: hidden,
        activation: Activation::parse(activation).py_err()?,
    };
    let data = data.inner.clone();
    let out = py
        .allow_threads(|| {
            let model = cfg.init_model(data.dim(), data.k())?;
            robord::train(model, &data, &cfg)
        })
        .py_err()?;
    Ok(PyTrainResult {
        model: Py::new(py, PyOrdinalModel { inner: out.model })?,
        loss_curve: out.loss_curve,
        total_updates: out.rank_log.total_updates,
        unordered_updates: out.rank_log.unordered_updates,
        final_ordered: out.rank_log.final_ordered,
    })
}

/// Anchor-point estimate of the transition matrix from noisy labels.
#[pyfunction]
#[pyo3(signature = (data, percentile=99.0, epochs=300, lr=0.003, hidden=vec![16], seed=0, out=None))]
#[allow(clippy::too_many_arguments)]
fn estimate_noise(
    py: Python<'_>,
    data: &PyDataset,
    percentile: f64,
    epochs: usize,
    lr: f64,
    hidden: Vec<usize>,
    seed: u64,
    out: Option<PathBuf>,
) -> PyResult<PyNoiseMatrix> {
    let cfg = EstimationConfig {
        percentile,
        epochs,
        learning_rate: lr,
        hidden_sizes: hidden,
        seed,
        ..EstimationConfig::default()
    };
    let data = data.inner.clone();
    let inner = py
        .allow_threads(|| {
            let head = train_multiclass(&data, &cfg)?;
            let est = estimate_matrix(&head, &data, &cfg)?;
            if let Some(path) = &out {
                write_estimate(path, &est, &cfg, None)?;
            }
            Ok(est)
        })
        .py_err()?;
    Ok(PyNoiseMatrix { inner })
}

fn thresholds(b: Vec<f64>) -> PyResult<Thresholds> {
    Thresholds::new(b).py_err()
}

/// `(value, d_g, d_b)` of the cumulative cross-entropy.
#[pyfunction]
fn ce_loss(g: f64, b: Vec<f64>, y: usize) -> PyResult<(f64, f64, Vec<f64>)> {
    let l = loss_ce(g, &thresholds(b)?, y).py_err()?;
    Ok((l.value, l.d_g, l.d_b))
}

/// `(value, d_g, d_b)` of the implicit-constraint hinge.
#[pyfunction]
fn imc_loss(g: f64, b: Vec<f64>, y: usize) -> PyResult<(f64, f64, Vec<f64>)> {
    let l = loss_imc(g, &thresholds(b)?, y).py_err()?;
    Ok((l.value, l.d_g, l.d_b))
}

#[pyfunction]
fn mae_loss(g: f64, b: Vec<f64>, y: usize) -> PyResult<usize> {
    loss_mae(g, &thresholds(b)?, y).py_err()
}

/// Noise-corrected loss evaluated at the observed noisy label.
#[pyfunction]
fn corrected(loss: &str, noise: &PyNoiseMatrix, g: f64, b: Vec<f64>, y_noisy: usize) -> PyResult<(f64, f64, Vec<f64>)> {
    let spec = loss_spec(loss, Some(noise))?;
    let l = corrected_loss(&spec, g, &thresholds(b)?, y_noisy).py_err()?;
    Ok((l.value, l.d_g, l.d_b))
}

#[pyfunction]
fn predict_from_score(g: f64, b: Vec<f64>) -> usize {
    robord::predict_from_score(g, &b)
}

/// Runs the repeated-trial benchmark and returns the report as JSON.
///
/// Without `data` the synthetic problem with `n` samples is used.
#[pyfunction]
#[pyo3(signature = (
    noise, trials=20, seed=0, data=None, k=None, label_column="last", n=2500,
    epochs=None, losses=None, corrections=None, clean=true, out=None
))]
#[allow(clippy::too_many_arguments)]
fn experiment(
    py: Python<'_>,
    noise: &PyNoiseMatrix,
    trials: usize,
    seed: u64,
    data: Option<PathBuf>,
    k: Option<usize>,
    label_column: &str,
    n: usize,
    epochs: Option<usize>,
    losses: Option<Vec<String>>,
    corrections: Option<Vec<String>>,
    clean: bool,
    out: Option<PathBuf>,
) -> PyResult<String> {
    let (name, source) = match data {
        Some(path) => {
            let k = k.ok_or_else(|| RobordError::new_err("k is required with a CSV dataset"))?;
            let name = path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
            let source = DataSource::Csv {
                path,
                label_column: LabelColumn::parse(label_column),
                k,
                drop_columns: Vec::new(),
            };
            (name, source)
        }
        None => {
            let spec = SynthSpec::with_shape(n, 2, noise.inner.k(), 0);
            ("synth".to_string(), DataSource::Synth(spec))
        }
    };
    let mut plan = ExperimentPlan::new(&name, source, noise.inner.clone());
    plan.trials = trials;
    plan.master_seed = seed;
    plan.clean_condition = clean;
    plan.output = out;
    if let Some(e) = epochs {
        plan.train.epochs = e;
        plan.estimation.epochs = e;
    }
    let bases = losses
        .map(|v| v.iter().map(|s| parse_base(s)).collect::<PyResult<Vec<_>>>())
        .transpose()?;
    let corrs = corrections
        .map(|v| v.iter().map(|s| Correction::parse(s).py_err()).collect::<PyResult<Vec<_>>>())
        .transpose()?;
    plan.variants.retain(|v: &Variant| {
        bases.as_ref().is_none_or(|b| b.contains(&v.loss))
            && corrs.as_ref().is_none_or(|c| c.contains(&v.correction))
    });
    let report = py.allow_threads(|| run_experiment(&plan)).py_err()?;
    serde_json::to_string(&report).map_err(|e| RobordError::new_err(e.to_string()))
}

#[pymodule]
fn robord_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RobordError", m.py().get_type::<RobordError>())?;
    m.add_class::<PyNoiseMatrix>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyOrdinalModel>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_noise, m)?)?;
    m.add_function(wrap_pyfunction!(ce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(imc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mae_loss, m)?)?;
    m.add_function(wrap_pyfunction!(corrected, m)?)?;
    m.add_function(wrap_pyfunction!(predict_from_score, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    Ok(())
}

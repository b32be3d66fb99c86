//! Python bindings for `kdcode`.
//!
//! Matrices cross the boundary as lists of rows of floats; codes as lists of
//! lists of ints.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use kdcode::codec::{self, CodeBook, KdSpec, ScheduleMode, TemperatureSchedule};
use kdcode::composer::{ComposerVariant, KdModel};
use kdcode::data::{self, Checkpoint, EmbeddingMatrix, SyntheticSpec};
use kdcode::eval::{self, NmiNorm};
use kdcode::numerics::Matrix;
use kdcode::trainer::{self, CodeMode, TrainConfig};

create_exception!(kdcode, KdError, PyException);

fn err(e: kdcode::Error) -> PyErr {
    KdError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = kdcode::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

#[pyclass(name = "KdSpec", module = "kdcode", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKdSpec {
    inner: KdSpec,
}

#[pymethods]
impl PyKdSpec {
    #[new]
    #[pyo3(signature = (k, d, n, allow_collisions = false))]
    fn new(k: usize, d: usize, n: usize, allow_collisions: bool) -> PyResult<Self> {
        let inner = if allow_collisions {
            KdSpec::allowing_collisions(k, d, n)
        } else {
            KdSpec::new(k, d, n)
        };
        inner.map(|inner| PyKdSpec { inner }).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn has_capacity(&self) -> bool {
        self.inner.has_capacity()
    }

    fn is_compact(&self) -> bool {
        self.inner.is_compact()
    }

    fn __repr__(&self) -> String {
        format!("KdSpec(k={}, d={}, n={})", self.inner.k(), self.inner.d(), self.inner.n())
    }
}

#[pyclass(name = "CodeBook", module = "kdcode", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCodeBook {
    inner: CodeBook,
}

#[pymethods]
impl PyCodeBook {
    #[new]
    #[pyo3(signature = (spec, codes, labels = None))]
    fn new(spec: &PyKdSpec, codes: Vec<Vec<usize>>, labels: Option<Vec<String>>) -> PyResult<Self> {
        let d = spec.inner.d();
        if let Some(bad) = codes.iter().position(|c| c.len() != d) {
            return Err(KdError::new_err(format!("code {bad} has {} entries, expected {d}", codes[bad].len())));
        }
        let mut inner = CodeBook::new(spec.inner, codes.concat()).map_err(err)?;
        if let Some(labels) = labels {
            inner = inner.with_labels(labels).map_err(err)?;
        }
        Ok(PyCodeBook { inner })
    }

    #[staticmethod]
    fn random(spec: &PyKdSpec, seed: u64) -> Self {
        PyCodeBook {
            inner: CodeBook::random(spec.inner, &mut kdcode::Rng::new(seed)),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        data::load_codebook(path).map(|inner| PyCodeBook { inner }).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        data::save_codebook(path, &self.inner).map_err(err)
    }

    #[getter]
    fn spec(&self) -> PyKdSpec {
        PyKdSpec { inner: self.inner.spec() }
    }

    #[getter]
    fn codes(&self) -> Vec<Vec<usize>> {
        self.inner.codes().map(<[usize]>::to_vec).collect()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<String>> {
        self.inner.labels().map(<[String]>::to_vec)
    }

    fn render(&self, i: usize) -> PyResult<String> {
        if i >= self.inner.len() {
            return Err(pyo3::exceptions::PyIndexError::new_err(i));
        }
        Ok(self.inner.render(i))
    }

    /// One integer id per symbol; equal ids mean equal codes.
    fn code_ids(&self) -> Vec<u128> {
        (0..self.inner.len()).map(|i| self.inner.code_id(i)).collect()
    }

    /// `(rendered code, labels)` for every group of at least `min_size` symbols.
    #[pyo3(signature = (min_size = 1))]
    fn groups(&self, min_size: usize) -> PyResult<Vec<(String, Vec<String>)>> {
        let labels = self
            .inner
            .labels()
            .ok_or_else(|| KdError::new_err("codebook has no symbol labels"))?;
        let report = eval::code_groups(&self.inner, labels).map_err(err)?;
        Ok(report
            .groups
            .into_iter()
            .filter(|g| g.labels.len() >= min_size)
            .map(|g| (g.rendered_code(), g.labels))
            .collect())
    }

    fn changed_fraction(&self, other: &PyCodeBook) -> f64 {
        self.inner.changed_fraction(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &PyCodeBook) -> bool {
        self.inner == other.inner
    }
}

#[pyclass(name = "KdModel", module = "kdcode", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKdModel {
    inner: KdModel,
}

#[pymethods]
impl PyKdModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        data::load_checkpoint(path)
            .map(|c| PyKdModel { inner: c.model })
            .map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let ckpt = Checkpoint {
            model: self.inner.clone(),
            logits: None,
        };
        data::save_checkpoint(path, &ckpt).map_err(err)
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn embed(&self, code: Vec<usize>) -> PyResult<Vec<f64>> {
        self.inner.embed(&code).map_err(err)
    }

    fn reconstruct(&self, codebook: &PyCodeBook) -> PyResult<Vec<Vec<f64>>> {
        self.inner.reconstruct(&codebook.inner).map(|m| rows(&m)).map_err(err)
    }
}

#[pyclass(name = "TrainResult", module = "kdcode", frozen, get_all)]
struct PyTrainResult {
    codebook: PyCodeBook,
    model: PyKdModel,
    initial_loss: f64,
    final_loss: f64,
    losses: Vec<f64>,
    hard_losses: Vec<f64>,
    temperatures: Vec<f64>,
    changed_fractions: Vec<f64>,
}

#[pyclass(name = "RetrainResult", module = "kdcode", frozen, get_all)]
struct PyRetrainResult {
    model: PyKdModel,
    initial_loss: f64,
    final_loss: f64,
    losses: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn train_config(
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    composer: &str,
    dprime: Option<usize>,
    shuffle: bool,
    schedule: TemperatureSchedule,
    code_mode: CodeMode,
) -> PyResult<TrainConfig> {
    let config = TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size,
        seed,
        schedule,
        composer: parse::<ComposerVariant>(composer)?,
        code_mode,
        code_width: dprime,
        shuffle,
    };
    config.validate().map_err(err)?;
    Ok(config)
}

/// Learns codes for the rows of `embeddings`.
#[pyfunction]
#[pyo3(signature = (
    embeddings, k, d, *, lr = 0.01, epochs = 10, batch_size = 1, seed = 0,
    composer = "linear", dprime = None, shuffle = true, t0 = 1.0, decay_rate = 1.0,
    schedule = "scheduled", code_mode = "ste", allow_collisions = false, labels = None,
))]
#[allow(clippy::too_many_arguments)]
fn learn_codes(
    py: Python<'_>,
    embeddings: Vec<Vec<f64>>,
    k: usize,
    d: usize,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    composer: &str,
    dprime: Option<usize>,
    shuffle: bool,
    t0: f64,
    decay_rate: f64,
    schedule: &str,
    code_mode: &str,
    allow_collisions: bool,
    labels: Option<Vec<String>>,
) -> PyResult<PyTrainResult> {
    let x = matrix(embeddings)?;
    let spec = PyKdSpec::new(k, d, x.rows(), allow_collisions)?.inner;
    let schedule = TemperatureSchedule::new(t0, decay_rate, parse::<ScheduleMode>(schedule)?).map_err(err)?;
    let config = train_config(lr, epochs, batch_size, seed, composer, dprime, shuffle, schedule, parse(code_mode)?)?;
    let report = py.detach(|| trainer::learn_codes(&x, spec, &config)).map_err(err)?;
    let mut codebook = report.codebook.clone();
    if let Some(labels) = labels {
        codebook = codebook.with_labels(labels).map_err(err)?;
    }
    Ok(PyTrainResult {
        final_loss: report.final_loss(),
        losses: report.losses(),
        hard_losses: report.hard_losses(),
        temperatures: report.temperatures(),
        changed_fractions: report.changed_fractions(),
        initial_loss: report.initial_loss,
        codebook: PyCodeBook { inner: codebook },
        model: PyKdModel { inner: report.model },
    })
}

/// Trains fresh code tables and composer with the codes held fixed.
#[pyfunction]
#[pyo3(signature = (
    embeddings, codebook, *, lr = 0.01, epochs = 10, batch_size = 1, seed = 0,
    composer = "linear", dprime = None, shuffle = true,
))]
#[allow(clippy::too_many_arguments)]
fn retrain(
    py: Python<'_>,
    embeddings: Vec<Vec<f64>>,
    codebook: &PyCodeBook,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    composer: &str,
    dprime: Option<usize>,
    shuffle: bool,
) -> PyResult<PyRetrainResult> {
    let x = matrix(embeddings)?;
    let config = train_config(lr, epochs, batch_size, seed, composer, dprime, shuffle, TemperatureSchedule::default(), CodeMode::Ste)?;
    let book = &codebook.inner;
    let report = py
        .detach(|| trainer::retrain_code_embeddings(&x, book, &config))
        .map_err(err)?;
    Ok(PyRetrainResult {
        model: PyKdModel { inner: report.model },
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        losses: report.losses,
    })
}

/// Parameter counts and compression rates for a KD configuration.
#[pyfunction]
#[pyo3(signature = (n, d, k, dprime, composer = "linear", code_dim = None))]
fn param_count<'py>(
    py: Python<'py>,
    n: usize,
    d: u64,
    k: usize,
    dprime: u64,
    composer: &str,
    code_dim: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let code_dim = match code_dim {
        Some(v) => v,
        None => codec::min_code_dim(n as u64, k as u64).map_err(err)?,
    };
    let spec = KdSpec::allowing_collisions(k, code_dim, n).map_err(err)?;
    let count = eval::param_count(spec, dprime, d, parse(composer)?);
    let out = PyDict::new(py);
    out.set_item("code_dim", code_dim)?;
    out.set_item("conventional_baseline", count.conventional_baseline)?;
    out.set_item("code_embedding_params", count.code_embedding_params)?;
    out.set_item("composer_params", count.composer_params)?;
    out.set_item("total_params", count.total)?;
    out.set_item("rate_code_only", eval::compression_rate(&count, false))?;
    out.set_item("rate_with_composer", eval::compression_rate(&count, true))?;
    Ok(out)
}

#[pyfunction]
fn min_code_dim(n: u64, k: u64) -> PyResult<usize> {
    codec::min_code_dim(n, k).map_err(err)
}

/// Probability that `n` uniform random codes are pairwise distinct.
#[pyfunction]
fn collision_free_probability(n: u64, k: u64, d: u32) -> PyResult<f64> {
    codec::collision_free_probability(n, k, d)
        .map(|e| e.probability)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, norm = "geometric"))]
fn nmi(a: Vec<i64>, b: Vec<i64>, norm: &str) -> PyResult<f64> {
    eval::nmi_with(&a, &b, parse::<NmiNorm>(norm)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (original, reconstructed, k = 10))]
fn neighbor_preservation(original: Vec<Vec<f64>>, reconstructed: Vec<Vec<f64>>, k: usize) -> PyResult<f64> {
    eval::neighbor_preservation(&matrix(original)?, &matrix(reconstructed)?, k).map_err(err)
}

/// Gaussian clusters: `(vectors, labels, cluster ids)`.
#[pyfunction]
#[pyo3(signature = (num_points = 10_000, num_clusters = 100, dim = 10, center_scale = None, noise_sigma = None, seed = 0))]
fn generate_clusters(
    num_points: usize,
    num_clusters: usize,
    dim: usize,
    center_scale: Option<f64>,
    noise_sigma: Option<f64>,
    seed: u64,
) -> PyResult<(Rows, Vec<String>, Vec<usize>)> {
    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        num_points,
        num_clusters,
        dim,
        center_scale: center_scale.unwrap_or(defaults.center_scale),
        noise_sigma: noise_sigma.unwrap_or(defaults.noise_sigma),
        seed,
    };
    let synth = data::generate_clusters(&spec).map_err(err)?;
    let labels = synth.embeddings.labels_or_indices();
    Ok((rows(&synth.embeddings.vectors), labels, synth.clusters))
}

/// Reads a whitespace-separated embeddings file: `(vectors, labels or None)`.
#[pyfunction]
fn load_embeddings(path: &str) -> PyResult<(Rows, Option<Vec<String>>)> {
    let emb = data::load_embeddings_text(path).map_err(err)?;
    Ok((rows(&emb.vectors), emb.labels))
}

#[pyfunction]
#[pyo3(signature = (path, vectors, labels = None))]
fn save_embeddings(path: &str, vectors: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> PyResult<()> {
    let emb = EmbeddingMatrix::new(matrix(vectors)?, labels).map_err(err)?;
    data::save_embeddings_text(path, &emb).map_err(err)
}

#[pymodule(name = "kdcode")]
fn kdcode_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KdError", m.py().get_type::<KdError>())?;
    m.add_class::<PyKdSpec>()?;
    m.add_class::<PyCodeBook>()?;
    m.add_class::<PyKdModel>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_class::<PyRetrainResult>()?;
    m.add_function(wrap_pyfunction!(learn_codes, m)?)?;
    m.add_function(wrap_pyfunction!(retrain, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(min_code_dim, m)?)?;
    m.add_function(wrap_pyfunction!(collision_free_probability, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(neighbor_preservation, m)?)?;
    m.add_function(wrap_pyfunction!(generate_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(load_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(save_embeddings, m)?)?;
    Ok(())
}

//! Python bindings: the `lorp` extension module.
//!
//! Layer indices crossing this boundary follow the same conventions as the
//! JSON outputs: cluster assignments and plan layers are 1-based, while
//! `SimilarityMatrix.__getitem__` takes 0-based `(i, j)` like any Python
//! sequence.

use std::fs::{self, File};
use std::io::BufWriter;

use lorp_core::activation_store::{create_dump, read_dump, MultiDumpReader, SampleChunk};
use lorp_core::clustering::{spectral_cluster as cluster_layers, to_affinity};
use lorp_core::similarity::{accumulate_source, SimilarityDocument, DEFAULT_EPSILON};
use lorp_core::synth;
use lorp_core::{locality as loc, plan_from_similarity, ClusterCount, DumpHeader, ErrorKind};
use lorp_core::{LocalityReport, Method, PlanOptions, PlantedSpec};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;

create_exception!(
    lorp,
    LorpError,
    PyException,
    "Base class for planner errors."
);
create_exception!(
    lorp,
    FormatError,
    LorpError,
    "Malformed dump, matrix or partition."
);
create_exception!(
    lorp,
    ComputationError,
    LorpError,
    "A computation could not complete."
);

fn to_py_err(e: lorp_core::Error) -> PyErr {
    let message = e.to_string();
    match e.kind() {
        ErrorKind::Usage => PyValueError::new_err(message),
        ErrorKind::Format => FormatError::new_err(message),
        ErrorKind::Computation => ComputationError::new_err(message),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    to_py_err(e.into())
}

fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts either a JSON string or any object `json.dumps` can serialize.
fn json_text(value: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = value.cast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    let py = value.py();
    py.import("json")?
        .call_method1("dumps", (value,))?
        .extract()
}

fn parse_spec(spec: &Bound<'_, PyAny>) -> PyResult<PlantedSpec> {
    let spec: PlantedSpec = serde_json::from_str(&json_text(spec)?)
        .map_err(|e| PyValueError::new_err(format!("invalid planted spec: {e}")))?;
    spec.validate().map_err(to_py_err)?;
    Ok(spec)
}

fn parse_k(k: &Bound<'_, PyAny>) -> PyResult<ClusterCount> {
    if let Ok(n) = k.extract::<usize>() {
        return Ok(ClusterCount::Fixed(n));
    }
    let text: String = k
        .extract()
        .map_err(|_| PyValueError::new_err("k must be a positive integer or \"auto\""))?;
    text.parse().map_err(PyValueError::new_err)
}

/// Square layer-by-layer cosine similarity matrix.
#[pyclass(name = "SimilarityMatrix", module = "lorp", frozen)]
pub struct PySimilarityMatrix {
    inner: lorp_core::SimilarityMatrix,
}

#[pymethods]
impl PySimilarityMatrix {
    #[new]
    #[pyo3(signature = (rows, token_total = 0, epsilon = 0.0))]
    fn new(rows: Vec<Vec<f64>>, token_total: u64, epsilon: f64) -> PyResult<Self> {
        lorp_core::SimilarityMatrix::from_rows(&rows, token_total, epsilon)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    /// Reads a matrix document written by `save` or by `lorp sim`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| to_py_err(e.into()))?;
        let doc: SimilarityDocument = serde_json::from_str(&text).map_err(json_err)?;
        lorp_core::SimilarityMatrix::from_document(&doc)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut text = serde_json::to_string_pretty(&self.inner.to_document()).map_err(json_err)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| to_py_err(e.into()))
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers()
    }

    #[getter]
    fn token_total(&self) -> u64 {
        self.inner.token_total()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    /// Invariant battery as a list of dicts with `name`, `hard`, `passed`, `detail`.
    fn check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        #[derive(Serialize)]
        struct Line {
            name: &'static str,
            hard: bool,
            passed: bool,
            detail: String,
        }
        let lines: Vec<Line> = self
            .inner
            .check_invariants()
            .into_iter()
            .map(|c| Line {
                name: c.name,
                hard: c.hard,
                passed: c.passed,
                detail: c.detail,
            })
            .collect();
        to_python(py, &lines)
    }

    fn __len__(&self) -> usize {
        self.inner.n_layers()
    }

    fn __getitem__(&self, index: (usize, usize)) -> PyResult<f64> {
        let (i, j) = index;
        let n = self.inner.n_layers();
        if i >= n || j >= n {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!(
                "index ({i}, {j}) out of range for {n} layers"
            )));
        }
        Ok(self.inner.get(i, j))
    }

    fn __repr__(&self) -> String {
        format!(
            "SimilarityMatrix(n_layers={}, token_total={}, digest={})",
            self.inner.n_layers(),
            self.inner.token_total(),
            &self.inner.digest()[..12]
        )
    }
}

/// Streams one or more dump files into a similarity matrix.
#[pyfunction]
#[pyo3(signature = (paths, epsilon = DEFAULT_EPSILON, workers = 1))]
fn similarity_from_dumps(
    py: Python<'_>,
    paths: Vec<String>,
    epsilon: f64,
    workers: usize,
) -> PyResult<PySimilarityMatrix> {
    if workers == 0 {
        return Err(PyValueError::new_err("workers must be at least 1"));
    }
    py.detach(|| {
        let mut reader = MultiDumpReader::open(&paths)?;
        accumulate_source(&mut reader, epsilon, workers)?.finalize()
    })
    .map(|inner| PySimilarityMatrix { inner })
    .map_err(to_py_err)
}

/// Locality report: off-diagonal mean, score, recommended K and distance profile.
#[pyfunction]
fn locality<'py>(py: Python<'py>, matrix: &PySimilarityMatrix) -> PyResult<Bound<'py, PyAny>> {
    let report = LocalityReport::from_matrix(&matrix.inner).map_err(to_py_err)?;
    to_python(py, &report)
}

#[pyfunction]
fn rls(off_diagonal_mean: f64) -> PyResult<f64> {
    loc::rls(off_diagonal_mean).map_err(to_py_err)
}

#[pyfunction]
fn recommend_k(rls: f64) -> usize {
    loc::recommend_k(rls)
}

/// 1-based cluster label per layer, numbered by first appearance in depth.
#[pyfunction]
#[pyo3(signature = (matrix, k, seed = 0))]
fn spectral_cluster(
    py: Python<'_>,
    matrix: &PySimilarityMatrix,
    k: usize,
    seed: u64,
) -> PyResult<Vec<usize>> {
    let affinity = to_affinity(&matrix.inner);
    py.detach(|| cluster_layers(&affinity, k, seed))
        .map(|p| p.assignment)
        .map_err(to_py_err)
}

/// Pruning plan as a dict with the same fields as `plan.json`.
#[pyfunction]
#[pyo3(signature = (matrix, budget, k = None, method = "lorp", seed = 0))]
fn plan<'py>(
    py: Python<'py>,
    matrix: &PySimilarityMatrix,
    budget: usize,
    k: Option<&Bound<'py, PyAny>>,
    method: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let options = PlanOptions {
        method: method.parse::<Method>().map_err(PyValueError::new_err)?,
        k: k.map(parse_k).transpose()?.unwrap_or(ClusterCount::Auto),
        budget,
        seed,
    };
    let (_, plan) = py
        .detach(|| plan_from_similarity(&matrix.inner, &options))
        .map_err(to_py_err)?;
    to_python(py, &plan)
}

/// Closed-form block similarity matrix for a planted spec (dict or JSON string).
#[pyfunction]
fn generate_similarity(spec: &Bound<'_, PyAny>) -> PyResult<PySimilarityMatrix> {
    let spec = parse_spec(spec)?;
    synth::generate_similarity(&spec)
        .map(|inner| PySimilarityMatrix { inner })
        .map_err(to_py_err)
}

/// Writes a planted-cluster dump and returns its size in bytes.
#[pyfunction]
#[pyo3(signature = (spec, path, samples = 128, tokens = 2048))]
fn generate_dump(
    py: Python<'_>,
    spec: &Bound<'_, PyAny>,
    path: &str,
    samples: usize,
    tokens: usize,
) -> PyResult<u64> {
    let spec = parse_spec(spec)?;
    py.detach(|| {
        let file = File::create(path)?;
        synth::generate_dump(&spec, samples, tokens, BufWriter::new(file))
    })
    .map_err(to_py_err)
}

/// Writes a dump from flat float chunks, each holding whole tokens laid out
/// layer-major. Returns the size in bytes.
#[pyfunction]
fn write_dump(path: &str, n_layers: u32, d_model: u32, chunks: Vec<Vec<f32>>) -> PyResult<u64> {
    let header = DumpHeader::new(n_layers, d_model).map_err(to_py_err)?;
    let record = header.record_len();
    let mut writer = create_dump(path, header).map_err(to_py_err)?;
    for chunk in chunks {
        if chunk.is_empty() || chunk.len() % record != 0 {
            return Err(PyValueError::new_err(format!(
                "chunk of {} floats is not a whole number of {record}-float tokens",
                chunk.len()
            )));
        }
        let tokens = u32::try_from(chunk.len() / record)
            .map_err(|_| PyValueError::new_err("chunk too large"))?;
        writer
            .write_chunk(&SampleChunk::new(tokens, chunk))
            .map_err(to_py_err)?;
    }
    writer.finish().map(|(_, bytes)| bytes).map_err(to_py_err)
}

/// `(n_layers, d_model)` from a dump header.
#[pyfunction]
fn read_dump_header(path: &str) -> PyResult<(usize, usize)> {
    let header = read_dump(path).map_err(to_py_err)?.header();
    Ok((header.n_layers(), header.d_model()))
}

#[pymodule]
pub fn lorp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("LorpError", py.get_type::<LorpError>())?;
    m.add("FormatError", py.get_type::<FormatError>())?;
    m.add("ComputationError", py.get_type::<ComputationError>())?;
    m.add_class::<PySimilarityMatrix>()?;
    m.add_function(wrap_pyfunction!(similarity_from_dumps, m)?)?;
    m.add_function(wrap_pyfunction!(locality, m)?)?;
    m.add_function(wrap_pyfunction!(rls, m)?)?;
    m.add_function(wrap_pyfunction!(recommend_k, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(generate_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dump, m)?)?;
    m.add_function(wrap_pyfunction!(write_dump, m)?)?;
    m.add_function(wrap_pyfunction!(read_dump_header, m)?)?;
    Ok(())
}

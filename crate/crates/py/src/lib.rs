//! Python bindings: the simulation driver plus the core numeric operations
//! on plain lists.

use std::path::PathBuf;

use fedkd::aggregation::{self, Metric, UpdateSet};
use fedkd::cli;
use fedkd::data::dirichlet_partition;
use fedkd::federation::{SimConfig, Simulation as Engine};
use fedkd::nn::{self, DenseTensor, FlatUpdate};
use fedkd::Error;
use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::MissingArtifact(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Round { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A config given as a dict, a JSON string or a path to a JSON file.
fn config_arg(
    py: Python<'_>,
    config: &Bound<'_, PyAny>,
    overrides: Vec<String>,
) -> PyResult<SimConfig> {
    if let Ok(path) = config.extract::<PathBuf>() {
        if path.is_file() {
            return cli::parse_config(&path, &overrides).map_err(py_err);
        }
    }
    let text: String = if config.is_instance_of::<PyDict>() {
        py.import("json")?
            .call_method1("dumps", (config,))?
            .extract()?
    } else {
        config.extract()?
    };
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    for o in &overrides {
        cli::apply_override(&mut doc, o).map_err(py_err)?;
    }
    cli::config_from_value(doc).map_err(py_err)
}

fn tensor(rows: Vec<Vec<f32>>) -> PyResult<DenseTensor> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    DenseTensor::new(vec![rows.len(), width], rows.concat()).map_err(py_err)
}

fn update_set(updates: Vec<Vec<f32>>) -> PyResult<UpdateSet> {
    UpdateSet::from_updates(updates.into_iter().map(FlatUpdate::new).collect()).map_err(py_err)
}

/// A federated simulation stepped from Python.
#[pyclass(module = "pyfedkd")]
struct Simulation {
    inner: Engine,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (config, overrides = Vec::new(), threads = None))]
    fn new(
        py: Python<'_>,
        config: &Bound<'_, PyAny>,
        overrides: Vec<String>,
        threads: Option<usize>,
    ) -> PyResult<Self> {
        let config = config_arg(py, config, overrides)?;
        let inner = py.detach(|| {
            let sim = Engine::new(config)?;
            match threads {
                Some(n) => sim.with_threads(n),
                None => Ok(sim),
            }
        });
        Ok(Simulation {
            inner: inner.map_err(py_err)?,
        })
    }

    #[getter]
    fn round(&self) -> usize {
        self.inner.state().round
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.model().num_params()
    }

    fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    /// Runs one round and returns its record as a dict.
    fn run_round<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let inner = &mut self.inner;
        let out = py.detach(|| inner.run_round()).map_err(py_err)?;
        to_py(py, &out.record)
    }

    /// Runs the remaining rounds; returns their records.
    fn run<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let inner = &mut self.inner;
        let records = py
            .detach(|| {
                let mut out = Vec::new();
                while !inner.is_finished() {
                    out.push(inner.run_round()?.record);
                }
                Ok(out)
            })
            .map_err(py_err)?;
        to_py(py, &records)
    }

    /// `(asr, accuracy)` of the current global model.
    fn evaluate(&self, py: Python<'_>) -> PyResult<(f64, f64)> {
        let inner = &self.inner;
        py.detach(|| inner.evaluate()).map_err(py_err)
    }

    fn params(&self) -> Vec<f32> {
        self.inner.state().params.values().to_vec()
    }

    fn partition<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.state().partition)
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.config())
    }

    fn save_params(&self, path: PathBuf) -> PyResult<()> {
        self.inner.state().params.save(&path).map_err(py_err)
    }
}

/// Runs a whole experiment and writes the usual artifacts under `out`.
#[pyfunction]
#[pyo3(signature = (config, out, overrides = Vec::new()))]
fn run<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyAny>,
    out: PathBuf,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = config_arg(py, config, overrides)?;
    let records = py
        .detach(|| cli::run::cmd_run(config, &out))
        .map_err(py_err)?;
    to_py(py, &records)
}

#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f32>>, labels: Vec<usize>) -> PyResult<f64> {
    nn::cross_entropy(&tensor(logits)?, &labels).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (student, teacher, temperature = 1.0))]
fn kd_loss(student: Vec<Vec<f32>>, teacher: Vec<Vec<f32>>, temperature: f64) -> PyResult<f64> {
    nn::kd_loss(&tensor(student)?, &tensor(teacher)?, temperature).map_err(py_err)
}

#[pyfunction]
fn grad_wrt_logits(logits: Vec<f32>, label: usize) -> PyResult<Vec<f32>> {
    let n = logits.len();
    let g = nn::grad_wrt_logits(
        &DenseTensor::new(vec![1, n], logits).map_err(py_err)?,
        label,
    )
    .map_err(py_err)?;
    Ok(g.values().to_vec())
}

#[pyfunction]
#[pyo3(signature = (l_clean, l_poison, label, target, gamma = 2.0, beta = 0.5))]
fn poisoned_soft_target(
    l_clean: Vec<f32>,
    l_poison: Vec<f32>,
    label: usize,
    target: usize,
    gamma: f64,
    beta: f64,
) -> PyResult<Vec<f32>> {
    fedkd::attacks::poisoned_soft_target(&l_clean, &l_poison, label, target, gamma, beta)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (updates, f, squared = true))]
fn krum_scores(updates: Vec<Vec<f32>>, f: usize, squared: bool) -> PyResult<Vec<f64>> {
    aggregation::krum_scores(&update_set(updates)?, f, squared).map_err(py_err)
}

/// `(accepted indices, aggregate)`.
#[pyfunction]
#[pyo3(signature = (updates, f, m, server_lr = 1.0, squared = true))]
fn multi_krum(
    updates: Vec<Vec<f32>>,
    f: usize,
    m: usize,
    server_lr: f64,
    squared: bool,
) -> PyResult<(Vec<usize>, Vec<f32>)> {
    let out =
        aggregation::multi_krum(&update_set(updates)?, f, m, server_lr, squared).map_err(py_err)?;
    Ok((out.accepted_ids, out.aggregate.into_values()))
}

#[pyfunction]
#[pyo3(signature = (updates, metric = "euclidean"))]
fn pairwise_distance(updates: Vec<Vec<f32>>, metric: &str) -> PyResult<Vec<Vec<f64>>> {
    let metric = match metric {
        "euclidean" => Metric::Euclidean,
        "cosine" => Metric::Cosine,
        other => return Err(PyValueError::new_err(format!("unknown metric {other:?}"))),
    };
    aggregation::pairwise_distance(&update_set(updates)?, metric).map_err(py_err)
}

/// `(members, degenerate)` of the largest HDBSCAN cluster.
#[pyfunction]
fn hdbscan_largest_cluster(
    dist: Vec<Vec<f64>>,
    min_cluster_size: usize,
) -> PyResult<(Vec<usize>, bool)> {
    let c = aggregation::hdbscan_largest_cluster(&dist, min_cluster_size).map_err(py_err)?;
    Ok((c.members, c.degenerate))
}

#[pyfunction]
fn dirichlet_split(
    labels: Vec<usize>,
    num_classes: usize,
    participants: usize,
    alpha: f64,
    seed: u64,
) -> PyResult<Vec<Vec<usize>>> {
    let plan =
        dirichlet_partition(&labels, num_classes, participants, alpha, seed).map_err(py_err)?;
    Ok(plan.assignments)
}

#[pyfunction]
fn rolling_average(series: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    fedkd::metrics::rolling_average(&series, window).map_err(py_err)
}

/// Largest relative gradient error for the configured model.
#[pyfunction]
fn gradcheck(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<f64> {
    let config = config_arg(py, config, Vec::new())?;
    let report = py
        .detach(|| cli::cmd_gradcheck(config, false))
        .map_err(py_err)?;
    Ok(report.max_rel_error)
}

#[pymodule]
fn pyfedkd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(kd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(grad_wrt_logits, m)?)?;
    m.add_function(wrap_pyfunction!(poisoned_soft_target, m)?)?;
    m.add_function(wrap_pyfunction!(krum_scores, m)?)?;
    m.add_function(wrap_pyfunction!(multi_krum, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_distance, m)?)?;
    m.add_function(wrap_pyfunction!(hdbscan_largest_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet_split, m)?)?;
    m.add_function(wrap_pyfunction!(rolling_average, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}

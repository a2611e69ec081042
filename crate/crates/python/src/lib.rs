//! Python bindings for `fedq`.
//!
//! Configs are accepted either as JSON strings or as plain dicts and use the
//! same layout as the CLI config files.

use fedq::experiments::{self, AnalyzeConfig, ExperimentConfig, RunConfig};
use fedq::federated;
use fedq::mdp::{self, QTable, DEFAULT_VI_TOL};
use fedq::schedules::{self, ScheduleRequest};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;

fn to_py_err(e: fedq::Error) -> PyErr {
    match e {
        fedq::Error::NonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.extract::<String>() {
        return Ok(s);
    }
    let json = obj.py().import_bound("json")?;
    json.call_method1("dumps", (obj,))?.extract()
}

fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import_bound("json")?.call_method1("loads", (text,))
}

fn rows(q: &QTable) -> Vec<Vec<f64>> {
    (0..q.n_states()).map(|s| q.row(s).to_vec()).collect()
}

/// A finite discounted MDP.
#[pyclass(name = "Mdp", module = "fedq_py")]
#[derive(Clone)]
struct PyMdp {
    inner: mdp::TabularMdp,
}

#[pymethods]
impl PyMdp {
    /// `reward` has one entry per (s, a) and `transition` one row per (s, a), row-major.
    #[new]
    fn new(n_states: usize, n_actions: usize, gamma: f64, reward: Vec<f64>, transition: Vec<Vec<f64>>) -> PyResult<Self> {
        if transition.len() != n_states * n_actions {
            return Err(PyValueError::new_err(format!(
                "transition must have {} rows, got {}",
                n_states * n_actions,
                transition.len()
            )));
        }
        let flat = transition.into_iter().flatten().collect();
        let inner = mdp::TabularMdp::new(n_states, n_actions, gamma, reward, flat).map_err(to_py_err)?;
        Ok(PyMdp { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = mdp::TabularMdp::from_json(text).map_err(to_py_err)?;
        Ok(PyMdp { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[pyo3(signature = (tol = DEFAULT_VI_TOL))]
    fn optimal_q(&self, tol: f64) -> PyResult<Vec<Vec<f64>>> {
        let q = mdp::optimal_q(&self.inner, tol).map_err(to_py_err)?;
        Ok(rows(&q))
    }

    /// Sup-norm distance between `T(q)` and `q`.
    fn bellman_residual(&self, q: Vec<Vec<f64>>) -> PyResult<f64> {
        let table = QTable::from_vec(q.len(), q.first().map_or(0, Vec::len), q.into_iter().flatten().collect())
            .map_err(to_py_err)?;
        mdp::bellman_residual(&self.inner, &table).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(n_states={}, n_actions={}, gamma={})",
            self.inner.n_states(),
            self.inner.n_actions(),
            self.inner.gamma()
        )
    }
}

/// Coverage and heterogeneity statistics for an analyze config.
#[pyfunction]
fn analyze<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = AnalyzeConfig::from_json(&config_text(config)?).map_err(to_py_err)?;
    let stats = py.allow_threads(|| experiments::analyze(&cfg)).map_err(to_py_err)?;
    to_python(py, &stats)
}

/// Evaluates the learning-rate, period and sample-size schedule of a request.
#[pyfunction]
fn schedule<'py>(py: Python<'py>, request: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let req: ScheduleRequest =
        serde_json::from_str(&config_text(request)?).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_python(py, &schedules::schedule(&req).map_err(to_py_err)?)
}

/// Runs a FedSynQ or FedAsynQ config; returns one dict per replication.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyList>> {
    let cfg = RunConfig::from_json(&config_text(config)?).map_err(to_py_err)?;
    let runs = py.allow_threads(|| experiments::run_single(&cfg)).map_err(to_py_err)?;
    let out = PyList::empty_bound(py);
    for r in runs {
        let d = PyDict::new_bound(py);
        d.set_item("run_id", r.run_id)?;
        d.set_item("seed", r.seed)?;
        d.set_item("algorithm", &r.trace.info.algorithm)?;
        d.set_item("t", r.trace.points.iter().map(|p| p.t).collect::<Vec<_>>())?;
        d.set_item("linf_error", r.trace.points.iter().map(|p| p.linf_error).collect::<Vec<_>>())?;
        d.set_item(
            "normalized_error",
            r.trace.points.iter().map(|p| p.normalized_error).collect::<Vec<_>>(),
        )?;
        out.append(d)?;
    }
    Ok(out)
}

/// Runs a sweep protocol and returns its summary rows.
///
/// Pass either `config` or `preset` ("fig3", "fig4", "fig5"); `sims` overrides the simulation count.
#[pyfunction]
#[pyo3(signature = (config = None, preset = None, sims = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: Option<&Bound<'py, PyAny>>,
    preset: Option<&str>,
    sims: Option<usize>,
) -> PyResult<Bound<'py, PyList>> {
    let mut cfg = match (config, preset) {
        (Some(c), None) => ExperimentConfig::from_json(&config_text(c)?),
        (None, Some(p)) => ExperimentConfig::preset(p),
        _ => return Err(PyValueError::new_err("pass exactly one of config and preset")),
    }
    .map_err(to_py_err)?;
    if let Some(n) = sims {
        cfg.n_sims = n;
    }
    let res = py.allow_threads(|| experiments::run_protocol(&cfg, None)).map_err(to_py_err)?;
    let out = PyList::empty_bound(py);
    for row in res.summary {
        let d = PyDict::new_bound(py);
        d.set_item("protocol", row.protocol.label())?;
        d.set_item("algorithm", row.algorithm.label())?;
        d.set_item("K", row.agents)?;
        d.set_item("tau", row.tau)?;
        d.set_item("eta", row.eta)?;
        d.set_item("t", row.t)?;
        d.set_item("metric_name", row.metric)?;
        d.set_item("n", row.n)?;
        d.set_item("mean", row.mean)?;
        d.set_item("std", row.std)?;
        out.append(d)?;
    }
    Ok(out)
}

/// Importance weights per (agent, pair) from per-agent visit counts over one window.
#[pyfunction]
fn importance_weights(counts: Vec<Vec<u32>>, eta: f64) -> PyResult<Vec<Vec<f64>>> {
    let refs: Vec<&[u32]> = counts.iter().map(Vec::as_slice).collect();
    let w = federated::importance_weights(&refs, eta).map_err(to_py_err)?;
    Ok((0..w.n_agents())
        .map(|k| (0..w.n_pairs()).map(|p| w.value(k, p)).collect())
        .collect())
}

#[pymodule]
fn fedq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", fedq::VERSION)?;
    m.add_class::<PyMdp>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(importance_weights, m)?)?;
    Ok(())
}

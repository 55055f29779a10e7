//! Python bindings: load packs, judge scripts, run the sandbox and rebuild
//! rankings from event logs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};
use shelljudge::analytics;
use shelljudge::judge::{self, TestResult};
use shelljudge::sandbox::{Backend, ExecutionOutcome, ExecutionSpec, ExitKind, Sandbox, SandboxConfig};
use shelljudge::scoring::{problem_stats, render_ranking, score};
use shelljudge::{CaseSet, ComparisonMode, ContestPack, Judge};

fn runtime(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Serializable value to plain Python objects through `json.loads`.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn backend(name: &str) -> PyResult<Backend> {
    name.parse().map_err(PyValueError::new_err)
}

fn sandbox(name: &str) -> PyResult<Sandbox> {
    Ok(Sandbox::new(SandboxConfig {
        backend: backend(name)?,
        ..SandboxConfig::default()
    }))
}

fn status_dict(status: Option<ExitKind>, d: &Bound<'_, PyDict>) -> PyResult<()> {
    let (status, code) = match status {
        Some(ExitKind::Exited(c)) => ("exited", Some(c)),
        Some(ExitKind::Killed(shelljudge::sandbox::KillReason::Timeout)) => ("timeout", None),
        Some(ExitKind::Killed(shelljudge::sandbox::KillReason::OutputLimit)) => ("output_limit", None),
        None => ("not_run", None),
    };
    d.set_item("status", status)?;
    d.set_item("exit_code", code)?;
    Ok(())
}

fn case_dict<'py>(py: Python<'py>, t: &TestResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("case", &t.case_id)?;
    d.set_item("verdict", t.verdict.as_str())?;
    d.set_item("wall_ms", t.wall_time_ms)?;
    status_dict(t.exit, &d)?;
    d.set_item("stdout", PyBytes::new(py, &t.produced_stdout))?;
    d.set_item("stderr", PyBytes::new(py, &t.stderr))?;
    Ok(d)
}

fn outcome_dict<'py>(py: Python<'py>, o: &ExecutionOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    status_dict(Some(o.status), &d)?;
    d.set_item("stdout", PyBytes::new(py, &o.stdout))?;
    d.set_item("stderr", PyBytes::new(py, &o.stderr))?;
    d.set_item("wall_ms", o.wall_time_ms)?;
    Ok(d)
}

/// A loaded contest pack. Hidden case contents are not exposed.
#[pyclass(frozen, module = "shelljudge_py")]
struct Pack {
    inner: Arc<ContestPack>,
}

#[pymethods]
impl Pack {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        let pack = shelljudge::load_pack(&path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Pack { inner: Arc::new(pack) })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.config.name
    }

    #[getter]
    fn duration_minutes(&self) -> u64 {
        self.inner.config.duration
    }

    #[getter]
    fn problem_ids(&self) -> Vec<String> {
        self.inner.config.problem_order.clone()
    }

    fn problem<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyDict>> {
        let p = self.inner.problem(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        let d = PyDict::new(py);
        d.set_item("id", &p.id)?;
        d.set_item("title", &p.title)?;
        d.set_item("statement", &p.statement)?;
        d.set_item("time_limit_ms", p.time_limit_ms)?;
        d.set_item("comparison_mode", to_py(py, &p.comparison_mode)?)?;
        d.set_item("public_cases", p.public_cases.len())?;
        d.set_item("hidden_cases", p.hidden_case_count())?;
        d.set_item("hints", self.inner.hint_limit(p))?;
        Ok(d)
    }

    /// Structural checks plus optional reference solutions (problem id to script).
    #[pyo3(signature = (references = None, backend = "portable"))]
    fn validate(
        &self,
        py: Python<'_>,
        references: Option<BTreeMap<String, Vec<u8>>>,
        backend: &str,
    ) -> PyResult<Vec<String>> {
        let judge = Judge::new(sandbox(backend)?);
        let refs = references.unwrap_or_default();
        let pack = self.inner.clone();
        let report = py.detach(move || shelljudge::validate_pack(&pack, &refs, &judge));
        Ok(report.findings.iter().map(|f| f.to_string()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Pack({:?}, {} problems)", self.inner.config.name, self.inner.problems.len())
    }
}

/// Judges `script` on one problem; `hidden=False` runs the public cases only.
#[pyfunction]
#[pyo3(signature = (pack, problem, script, hidden = true, backend = "portable"))]
fn evaluate<'py>(
    py: Python<'py>,
    pack: &Pack,
    problem: &str,
    script: Vec<u8>,
    hidden: bool,
    backend: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let judge = Judge::new(sandbox(backend)?);
    let set = if hidden { CaseSet::Hidden } else { CaseSet::Public };
    let inner = pack.inner.clone();
    let id = problem.to_string();
    let result = py
        .detach(move || judge.evaluate(&inner, &id, &script, set))
        .map_err(runtime)?;
    let d = PyDict::new(py);
    d.set_item("problem", &result.problem)?;
    d.set_item("verdict", result.aggregate.as_str())?;
    d.set_item("accepted", result.aggregate.is_accepted())?;
    let cases = PyList::empty(py);
    for t in &result.per_test {
        cases.append(case_dict(py, t)?)?;
    }
    d.set_item("cases", cases)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (produced, expected, mode = "newline_tolerant"))]
fn compare_output(produced: &[u8], expected: &[u8], mode: &str) -> PyResult<bool> {
    let mode: ComparisonMode = serde_json::from_value(serde_json::Value::String(mode.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown comparison mode `{mode}`")))?;
    Ok(judge::compare_output(produced, expected, mode))
}

/// Runs one script in the sandbox.
#[pyfunction]
#[pyo3(signature = (script, argv = Vec::new(), stdin = Vec::new(), time_limit_ms = 1000, output_limit = 1 << 20, files = None, backend = "portable"))]
#[allow(clippy::too_many_arguments)]
fn execute<'py>(
    py: Python<'py>,
    script: Vec<u8>,
    argv: Vec<String>,
    stdin: Vec<u8>,
    time_limit_ms: u64,
    output_limit: u64,
    files: Option<PathBuf>,
    backend: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let sb = sandbox(backend)?;
    let outcome = py
        .detach(move || {
            sb.execute(&ExecutionSpec {
                script: &script,
                argv: &argv,
                stdin: &stdin,
                time_limit: Duration::from_millis(time_limit_ms),
                output_limit,
                shared_files: files.as_deref(),
            })
        })
        .map_err(runtime)?;
    outcome_dict(py, &outcome)
}

#[pyfunction]
#[pyo3(signature = (backend = "portable"))]
fn capabilities(py: Python<'_>, backend: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &sandbox(backend)?.capabilities())
}

/// Ranking rows rebuilt from an event log.
#[pyfunction]
fn replay_ranking(py: Python<'_>, log: PathBuf, pack: &Pack) -> PyResult<Py<PyAny>> {
    let state = analytics::load_state(&log, &pack.inner).map_err(runtime)?;
    to_py(py, &score(&state, &pack.inner.config))
}

/// The ranking table as `admin replay` prints it.
#[pyfunction]
fn render_replay(log: PathBuf, pack: &Pack) -> PyResult<String> {
    let state = analytics::load_state(&log, &pack.inner).map_err(runtime)?;
    Ok(render_ranking(&score(&state, &pack.inner.config), &pack.inner))
}

#[pyfunction]
fn problem_statistics(py: Python<'_>, log: PathBuf, pack: &Pack) -> PyResult<Py<PyAny>> {
    let state = analytics::load_state(&log, &pack.inner).map_err(runtime)?;
    to_py(py, &problem_stats(&state, &pack.inner.config))
}

/// Writes the results CSV and returns its rows.
#[pyfunction]
fn export_results(py: Python<'_>, log: PathBuf, pack: &Pack, out: PathBuf) -> PyResult<Py<PyAny>> {
    let rows = analytics::export_results(&log, &pack.inner, &out).map_err(runtime)?;
    to_py(py, &rows)
}

#[pyfunction]
fn export_problem_stats(py: Python<'_>, log: PathBuf, pack: &Pack, out: PathBuf) -> PyResult<Py<PyAny>> {
    let stats = analytics::export_problem_stats(&log, &pack.inner, &out).map_err(runtime)?;
    to_py(py, &stats)
}

#[pymodule]
fn shelljudge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pack>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compare_output, m)?)?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(capabilities, m)?)?;
    m.add_function(wrap_pyfunction!(replay_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(render_replay, m)?)?;
    m.add_function(wrap_pyfunction!(problem_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(export_results, m)?)?;
    m.add_function(wrap_pyfunction!(export_problem_stats, m)?)?;
    Ok(())
}

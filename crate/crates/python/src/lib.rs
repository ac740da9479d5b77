// SPDX-License-Identifier: Apache-2.0

//! Python bindings: load packages, analyze them, inspect and replay
//! findings, and verify a corpus.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyValueError};
use pyo3::prelude::*;

use ::sgx_symex::corpus::{analyze_package, default_corpus_dir, verify_corpus, AnalyzeOptions};
use ::sgx_symex::detectors::FindingKind;
use ::sgx_symex::loader::{load_package as load_dir, EnclavePackage};
use ::sgx_symex::report::{
    explain, replay_witness, validate_report as check_schema, FindingReport, Report, ReplayOutcome, ReportOptions,
    REPORT_SCHEMA,
};

create_exception!(sgx_symex, AnalysisError, PyException);

fn json_value<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// An enclave package: manifest, program and optional expected findings.
#[pyclass(name = "Package", module = "sgx_symex", frozen)]
struct PyPackage {
    inner: EnclavePackage,
}

#[allow(clippy::too_many_arguments)]
fn options(
    ecalls: Option<Vec<String>>,
    seed: u64,
    max_steps: Option<u64>,
    max_states: Option<u64>,
    loop_bound: Option<u32>,
    timeout_sec: Option<u64>,
    workers: Option<usize>,
    disable: Option<Vec<String>>,
    verbose_provenance: bool,
) -> PyResult<AnalyzeOptions> {
    let mut o = AnalyzeOptions {
        seed,
        ecalls: ecalls.unwrap_or_default(),
        report: ReportOptions { verbose_provenance },
        ..AnalyzeOptions::default()
    };
    if let Some(v) = max_steps {
        o.limits.max_steps = v;
    }
    if let Some(v) = max_states {
        o.limits.max_states = v;
    }
    if let Some(v) = loop_bound {
        o.limits.loop_bound = v;
    }
    if let Some(v) = timeout_sec {
        o.limits.timeout_sec = v;
    }
    if let Some(w) = workers {
        o.workers = w.max(1);
    }
    for name in disable.unwrap_or_default() {
        let k = FindingKind::from_name(&name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown detector '{name}'")))?;
        o.disabled.insert(k);
    }
    Ok(o)
}

#[pymethods]
impl PyPackage {
    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    /// `(base, size)` of the enclave range.
    #[getter]
    fn enclave(&self) -> (u64, u64) {
        (self.inner.layout.enclave.base, self.inner.layout.enclave.size)
    }

    /// `(index, name)` of every ECALL.
    #[getter]
    fn ecalls(&self) -> Vec<(u32, String)> {
        self.inner.ecalls.iter().map(|e| (e.index, e.name.clone())).collect()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// Address of a code label, global or extern.
    fn symbol(&self, name: &str) -> Option<u64> {
        self.inner.program.symbol(name).map(|(a, _)| a)
    }

    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (ecalls=None, seed=0, max_steps=None, max_states=None, loop_bound=None,
                        timeout_sec=None, workers=None, disable=None, verbose_provenance=false))]
    fn analyze(
        &self,
        py: Python<'_>,
        ecalls: Option<Vec<String>>,
        seed: u64,
        max_steps: Option<u64>,
        max_states: Option<u64>,
        loop_bound: Option<u32>,
        timeout_sec: Option<u64>,
        workers: Option<usize>,
        disable: Option<Vec<String>>,
        verbose_provenance: bool,
    ) -> PyResult<PyReport> {
        let opts = options(
            ecalls,
            seed,
            max_steps,
            max_states,
            loop_bound,
            timeout_sec,
            workers,
            disable,
            verbose_provenance,
        )?;
        let pkg = &self.inner;
        let report = py
            .detach(|| analyze_package(pkg, &opts))
            .map_err(|e| AnalysisError::new_err(e.to_string()))?;
        Ok(PyReport { inner: report })
    }

    /// Replay finding `id` of `report` concretely. Returns `("confirmed",
    /// None)` or `("diverged", step)`.
    fn replay(&self, report: &PyReport, id: &str) -> PyResult<(String, Option<usize>)> {
        let (e, f) = report
            .inner
            .finding(id)
            .ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        let spec = self
            .inner
            .ecalls
            .iter()
            .find(|x| x.index == e.index)
            .ok_or_else(|| PyValueError::new_err(format!("package has no ECALL {}", e.index)))?;
        match replay_witness(&self.inner, spec, f) {
            Ok(ReplayOutcome::Confirmed) => Ok(("confirmed".into(), None)),
            Ok(ReplayOutcome::Diverged(step)) => Ok(("diverged".into(), Some(step))),
            Err(err) => Err(PyValueError::new_err(err.to_string())),
        }
    }

    fn __repr__(&self) -> String {
        format!("Package({:?}, {} ecalls)", self.inner.name, self.inner.ecalls.len())
    }
}

/// Analysis report for one package.
#[pyclass(name = "Report", module = "sgx_symex", frozen)]
struct PyReport {
    inner: Report,
}

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<PyReport> {
        Report::from_json(text)
            .map(|inner| PyReport { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn package(&self) -> &str {
        &self.inner.package
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn findings(&self) -> Vec<PyFinding> {
        self.inner
            .findings()
            .map(|(e, f)| PyFinding {
                ecall: e.name.clone(),
                inner: f.clone(),
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.finding_count()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_value(py, &self.inner.to_json())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn explain(&self, id: &str) -> PyResult<String> {
        explain(&self.inner, id).map_err(|e| PyKeyError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Report({:?}, {} findings)", self.inner.package, self.inner.finding_count())
    }
}

/// One reported finding.
#[pyclass(name = "Finding", module = "sgx_symex", frozen)]
struct PyFinding {
    ecall: String,
    inner: FindingReport,
}

#[pymethods]
impl PyFinding {
    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }
    #[getter]
    fn ecall(&self) -> &str {
        &self.ecall
    }
    #[getter]
    fn kind(&self) -> &str {
        &self.inner.kind
    }
    #[getter]
    fn pc(&self) -> u64 {
        self.inner.pc
    }
    #[getter]
    fn location(&self) -> &str {
        &self.inner.location
    }
    #[getter]
    fn severity(&self) -> &str {
        &self.inner.severity
    }
    #[getter]
    fn confidence(&self) -> &str {
        &self.inner.confidence
    }
    #[getter]
    fn reaches_enclave(&self) -> Option<bool> {
        self.inner.reaches_enclave
    }
    #[getter]
    fn value_controlled(&self) -> Option<bool> {
        self.inner.value_controlled
    }
    /// Labels of the provenance chain, roots first.
    #[getter]
    fn provenance(&self) -> Vec<String> {
        self.inner.provenance.iter().map(|h| h.label.clone()).collect()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        json_value(py, &text)
    }

    fn __repr__(&self) -> String {
        format!(
            "Finding({} {} at {}, {})",
            self.inner.id, self.inner.kind, self.inner.location, self.inner.severity
        )
    }
}

/// Load the package in directory `path`.
#[pyfunction]
fn load_package(path: PathBuf) -> PyResult<PyPackage> {
    load_dir(&path)
        .map(|inner| PyPackage { inner })
        .map_err(|e| AnalysisError::new_err(e.to_string()))
}

/// Load and analyze the package in `path` with default limits.
#[pyfunction]
#[pyo3(signature = (path, seed=0, ecalls=None))]
fn analyze(py: Python<'_>, path: PathBuf, seed: u64, ecalls: Option<Vec<String>>) -> PyResult<PyReport> {
    load_package(path)?.analyze(py, ecalls, seed, None, None, None, None, None, None, false)
}

/// Check every package under `corpus` (default: the bundled corpus). Returns
/// one dict per package.
#[pyfunction]
#[pyo3(signature = (corpus=None, disable=None))]
fn verify<'py>(
    py: Python<'py>,
    corpus: Option<PathBuf>,
    disable: Option<Vec<String>>,
) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    let opts = options(None, 0, None, None, None, None, None, disable, false)?;
    let dir = corpus.unwrap_or_else(default_corpus_dir);
    let verdicts = py
        .detach(|| verify_corpus(&dir, &opts))
        .map_err(|e| AnalysisError::new_err(format!("{}: {e}", dir.display())))?;
    verdicts
        .into_iter()
        .map(|v| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("name", &v.name)?;
            d.set_item("ok", v.ok())?;
            d.set_item("findings", v.findings)?;
            d.set_item("high", v.high)?;
            d.set_item("replays_confirmed", v.replays_confirmed)?;
            d.set_item("replays_total", v.replays_total)?;
            d.set_item("problems", &v.problems)?;
            Ok(d)
        })
        .collect()
}

/// Validate report JSON text against the bundled schema.
#[pyfunction]
fn validate_report(text: &str) -> PyResult<()> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    check_schema(&doc).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn sgx_symex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("REPORT_SCHEMA", REPORT_SCHEMA)?;
    m.add(
        "FINDING_KINDS",
        FindingKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>(),
    )?;
    m.add("AnalysisError", m.py().get_type::<AnalysisError>())?;
    m.add_class::<PyPackage>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyFinding>()?;
    m.add_function(wrap_pyfunction!(load_package, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(validate_report, m)?)?;
    Ok(())
}

//! Python bindings: the CodeBLEU scorer, patch extraction and application,
//! corpus ingestion and report aggregation.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use vulnrepair::corpus::{self, CorpusError, CorpusFilter, VulnRecord};
use vulnrepair::eval::{self, EvaluationRow, Grouping, ReportFormat};
use vulnrepair::metric::{self, MetricWeights, SimilarityBreakdown};
use vulnrepair::pipeline;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn corpus_err(e: CorpusError) -> PyErr {
    match e {
        CorpusError::Io { .. } | CorpusError::Unreadable { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn weights(w: Option<(f64, f64, f64, f64)>) -> PyResult<MetricWeights> {
    let w = match w {
        Some((ngram, weighted_ngram, ast, dataflow)) => MetricWeights { ngram, weighted_ngram, ast, dataflow },
        None => MetricWeights::default(),
    };
    w.validate().map_err(value_err)?;
    Ok(w)
}

/// Component scores and their weighted composite.
#[pyclass(frozen, name = "Similarity")]
#[derive(Clone)]
struct PySimilarity {
    #[pyo3(get)]
    ngram: f64,
    #[pyo3(get)]
    weighted_ngram: f64,
    #[pyo3(get)]
    ast: Option<f64>,
    #[pyo3(get)]
    dataflow: Option<f64>,
    #[pyo3(get)]
    composite: f64,
}

impl From<SimilarityBreakdown> for PySimilarity {
    fn from(b: SimilarityBreakdown) -> Self {
        Self { ngram: b.ngram, weighted_ngram: b.weighted_ngram, ast: b.ast, dataflow: b.dataflow, composite: b.composite }
    }
}

#[pymethods]
impl PySimilarity {
    fn __repr__(&self) -> String {
        format!(
            "Similarity(ngram={:.4}, weighted_ngram={:.4}, ast={:?}, dataflow={:?}, composite={:.4})",
            self.ngram, self.weighted_ngram, self.ast, self.dataflow, self.composite
        )
    }
}

#[pyfunction]
#[pyo3(signature = (candidate, reference, weights=None))]
fn codebleu(candidate: &str, reference: &str, weights: Option<(f64, f64, f64, f64)>) -> PyResult<PySimilarity> {
    let w = self::weights(weights)?;
    metric::codebleu(candidate, reference, &w).map(Into::into).map_err(value_err)
}

#[pyfunction]
fn tokenize(code: &str) -> Vec<String> {
    metric::tokenize_code(code).tokens().to_vec()
}

/// Def-use edges as `(def_site, use_site, variable_index)`.
#[pyfunction]
fn dataflow_edges(code: &str) -> PyResult<Vec<(String, String, usize)>> {
    let tree = metric::parse_c(code).map_err(value_err)?;
    Ok(metric::extract_dataflow(&tree)
        .edges()
        .iter()
        .map(|e| {
            let site = serde_json::to_value(e.def_site).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            (site, e.use_site.clone(), e.variable)
        })
        .collect())
}

#[pyfunction]
fn parses(code: &str) -> PyResult<bool> {
    Ok(metric::parse_c(code).map_err(value_err)?.parse_ok())
}

#[pyfunction]
#[pyo3(signature = (text, tokenizer="cl100k_base"))]
fn count_tokens(text: &str, tokenizer: &str) -> PyResult<usize> {
    corpus::count_tokens(text, tokenizer).map_err(corpus_err)
}

/// Returns `(status, code)`; status is "well_formed", "recovered" or "none".
#[pyfunction]
fn extract_patch(response: &str) -> (String, Option<String>) {
    let patch = pipeline::extract_patch(response);
    let status = match patch.extraction_status {
        pipeline::ExtractionStatus::WellFormed => "well_formed",
        pipeline::ExtractionStatus::Recovered => "recovered",
        pipeline::ExtractionStatus::None => "none",
    };
    (status.to_string(), patch.code)
}

#[pyfunction]
fn apply_patch(source: &str, function_name: &str, patch: &str) -> PyResult<String> {
    eval::apply_patch(source, function_name, patch).map_err(value_err)
}

/// One vulnerable/fixed function pair.
#[pyclass(frozen, name = "Record")]
struct PyRecord {
    inner: VulnRecord,
}

#[pymethods]
impl PyRecord {
    #[getter]
    fn cve_id(&self) -> &str {
        &self.inner.cve_id
    }

    #[getter]
    fn cwe_id(&self) -> &str {
        &self.inner.cwe_id
    }

    #[getter]
    fn function_name(&self) -> &str {
        &self.inner.function_name
    }

    #[getter]
    fn file_path(&self) -> &str {
        &self.inner.file_path
    }

    #[getter]
    fn before_code(&self) -> &str {
        &self.inner.before_code
    }

    #[getter]
    fn cve_description(&self) -> &str {
        &self.inner.cve_description
    }

    /// The fixed function. Counted as a read of the ground truth.
    fn fixed_code(&self) -> &str {
        self.inner.after_code.reveal()
    }

    fn __repr__(&self) -> String {
        format!("Record({}, {})", self.inner.key(), self.inner.cwe_id)
    }
}

#[pyfunction]
fn read_corpus(path: PathBuf) -> PyResult<Vec<PyRecord>> {
    Ok(corpus::read_corpus(&path).map_err(corpus_err)?.into_iter().map(|inner| PyRecord { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (db_path, token_limit=corpus::DEFAULT_TOKEN_LIMIT, language="C"))]
fn ingest(db_path: PathBuf, token_limit: usize, language: &str) -> PyResult<Vec<PyRecord>> {
    let filter = CorpusFilter { token_limit, target_language: language.to_string(), ..CorpusFilter::default() };
    Ok(corpus::ingest_database(&db_path, &filter)
        .map_err(corpus_err)?
        .into_iter()
        .map(|inner| PyRecord { inner })
        .collect())
}

/// Aggregates JSONL evaluation rows into a report string.
#[pyfunction]
#[pyo3(signature = (rows_path, format="markdown"))]
fn report(rows_path: PathBuf, format: &str) -> PyResult<String> {
    let text = std::fs::read_to_string(&rows_path).map_err(|e| PyIOError::new_err(format!("{}: {e}", rows_path.display())))?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<EvaluationRow>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let format: ReportFormat = format.parse().map_err(value_err)?;
    let report = eval::aggregate(&rows, &Grouping::ALL).map_err(value_err)?;
    eval::emit_report(&report, format).map_err(value_err)
}

#[pymodule]
#[pyo3(name = "vulnrepair")]
fn vulnrepair_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySimilarity>()?;
    m.add_class::<PyRecord>()?;
    m.add_function(wrap_pyfunction!(codebleu, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(dataflow_edges, m)?)?;
    m.add_function(wrap_pyfunction!(parses, m)?)?;
    m.add_function(wrap_pyfunction!(count_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(extract_patch, m)?)?;
    m.add_function(wrap_pyfunction!(apply_patch, m)?)?;
    m.add_function(wrap_pyfunction!(read_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}

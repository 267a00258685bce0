//! Python bindings. Records and summaries cross the boundary as plain dicts
//! with the same shape as their JSON forms.

use std::path::PathBuf;
use std::time::Duration;

use memaudit::canary::CanaryError;
use memaudit::gateway::ProviderKind;
use memaudit::metric::MetricError;
use memaudit::{
    AuditConfig, AuditRecord, AuxFact, CandidateNlls, CandidateSet, Cohort, EquivalenceProvider,
    Form, PropertySpec, ScoreMatrix, SubjectProfile, TemplateKind,
};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn metric_err(e: MetricError) -> PyErr {
    value_err(e)
}

fn canary_err(e: CanaryError) -> PyErr {
    value_err(e)
}

/// serde value -> Python object via the json module
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn parse_form(s: &str) -> PyResult<Form> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| value_err(format!("unknown form {s:?}; expected copular, possessive or transitive")))
}

fn form_name(f: Form) -> &'static str {
    match f {
        Form::Copular => "copular",
        Form::Possessive => "possessive",
        Form::Transitive => "transitive",
    }
}

fn kind_name(k: TemplateKind) -> &'static str {
    match k {
        TemplateKind::Baseline => "baseline",
        TemplateKind::Paraphrase => "paraphrase",
        TemplateKind::Contextualized => "contextualized",
    }
}

/// A canary pattern with `HUMAN_SUBJECT` and `PROTECTED_VALUE` placeholders.
#[pyclass(name = "CanaryTemplate", module = "memaudit", frozen, from_py_object)]
#[derive(Clone)]
struct PyTemplate(memaudit::CanaryTemplate);

#[pymethods]
impl PyTemplate {
    #[new]
    #[pyo3(signature = (pid, text, form, kind = "paraphrase", variant_id = 0))]
    fn new(pid: &str, text: &str, form: &str, kind: &str, variant_id: u32) -> PyResult<Self> {
        let kind: TemplateKind =
            serde_json::from_value(serde_json::Value::String(kind.to_string())).map_err(|_| value_err(format!("unknown kind {kind:?}")))?;
        memaudit::CanaryTemplate::new(pid, parse_form(form)?, kind, variant_id, text).map(Self).map_err(canary_err)
    }

    #[getter]
    fn pid(&self) -> &str {
        &self.0.pid
    }

    #[getter]
    fn text(&self) -> &str {
        &self.0.text
    }

    #[getter]
    fn form(&self) -> &'static str {
        form_name(self.0.form)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        kind_name(self.0.kind)
    }

    #[getter]
    fn variant_id(&self) -> u32 {
        self.0.variant_id
    }

    fn __repr__(&self) -> String {
        format!("CanaryTemplate({:?}, {:?}, form={:?}, kind={:?})", self.0.pid, self.0.text, self.form(), self.kind())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

#[pyfunction]
fn classify_form(label: &str) -> &'static str {
    form_name(memaudit::classify_form(label))
}

/// Baseline canary for a property; the form defaults to the classified one.
#[pyfunction]
#[pyo3(signature = (pid, label, form = None))]
fn render_baseline(pid: &str, label: &str, form: Option<&str>) -> PyResult<PyTemplate> {
    let spec = PropertySpec::new(pid, label, memaudit::Datatype::WikibaseItem).map_err(value_err)?;
    let form = match form {
        Some(f) => parse_form(f)?,
        None => memaudit::classify_form(label),
    };
    memaudit::render_baseline(&spec, form).map(PyTemplate).map_err(canary_err)
}

#[pyfunction]
fn instantiate(template: &PyTemplate, subject: &str, value: &str) -> String {
    memaudit::instantiate(&template.0, subject, value)
}

#[pyfunction]
fn generic_subject(template: &PyTemplate) -> PyTemplate {
    PyTemplate(memaudit::generic_subject(&template.0))
}

/// `aux_facts` is a list of `(label, value)` or `(pid, label, value)`.
#[pyfunction]
#[pyo3(signature = (template, subject, aux_facts, k))]
fn contextualize(template: &PyTemplate, subject: &str, aux_facts: Vec<Vec<String>>, k: usize) -> PyResult<PyTemplate> {
    let mut profile = SubjectProfile::new(subject);
    for f in aux_facts {
        let fact = match f.as_slice() {
            [label, value] => AuxFact::new(label, value),
            [pid, label, value] => AuxFact::new(label, value).with_pid(pid),
            _ => return Err(value_err("aux facts are (label, value) or (pid, label, value)")),
        };
        profile.aux_facts.push(fact);
    }
    memaudit::contextualize(&template.0, &profile, k).map(PyTemplate).map_err(canary_err)
}

#[pyfunction]
#[pyo3(signature = (name, k = 4))]
fn similar_names(name: &str, k: usize) -> Vec<String> {
    memaudit::similar_names(name, k).variants
}

/// Calibrated score per candidate. Each row is `(subject, generic, variants)`.
#[pyfunction]
#[pyo3(signature = (rows, alpha = 1.0))]
fn calibrated_scores(rows: Vec<(f64, f64, Vec<f64>)>, alpha: f64) -> PyResult<Vec<f64>> {
    let rows = rows.into_iter().map(|(subject, generic, variants)| CandidateNlls { subject, generic, variants }).collect();
    ScoreMatrix::new(rows, alpha).and_then(|m| m.scores()).map_err(metric_err)
}

/// 1-based ranks under descending score; ties take the worst rank.
#[pyfunction]
fn rank(scores: Vec<f64>) -> Vec<usize> {
    memaudit::rank_candidates(&scores).ranks
}

/// Rank-1 decision. Candidates are the ground truths followed by the
/// counterfactuals; `scores` follows the same order. `equivalence` is an
/// optional list of `(a, b, similarity)`.
#[pyfunction]
#[pyo3(signature = (scores, ground_truths, counterfactuals, equivalence = None, threshold = 0.75))]
fn decide<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    ground_truths: Vec<String>,
    counterfactuals: Vec<String>,
    equivalence: Option<Vec<(String, String, f64)>>,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cands = CandidateSet::new("P0", ground_truths, counterfactuals).map_err(metric_err)?;
    if scores.len() != cands.len() {
        return Err(value_err(format!("{} scores for {} candidates", scores.len(), cands.len())));
    }
    let eq = match equivalence {
        Some(entries) => EquivalenceProvider::table(entries).map_err(metric_err)?,
        None => EquivalenceProvider::exact(),
    }
    .with_threshold(threshold);
    let ranking = memaudit::rank_candidates(&scores);
    let d = memaudit::decide_memorization(&ranking, &cands, &eq);
    let out = PyDict::new(py);
    out.set_item("memorized", d.memorized)?;
    out.set_item("top_ground_truth", d.top_ground_truth.map(|i| cands.label(i).to_string()))?;
    out.set_item("ranks", ranking.ranks)?;
    out.set_item("equivalence_hits", to_py(py, &d.equivalence_hits)?)?;
    let strength = match d.strength_anchor {
        Some(anchor) => memaudit::strength(&scores, &d.strength_set, anchor).ok(),
        None => None,
    };
    out.set_item("lead_margin", strength.map(|s| s.lead_margin))?;
    out.set_item("strength", strength.map(|s| s.z))?;
    Ok(out)
}

/// Standardized lead margin `z*` of candidate `v_star`.
#[pyfunction]
fn strength<'py>(py: Python<'py>, scores: Vec<f64>, ground_truths: Vec<usize>, v_star: usize) -> PyResult<Bound<'py, PyDict>> {
    let s = memaudit::strength(&scores, &ground_truths, v_star).map_err(metric_err)?;
    let out = PyDict::new(py);
    out.set_item("z", s.z)?;
    out.set_item("lead_margin", s.lead_margin)?;
    out.set_item("mean", s.mean)?;
    out.set_item("std_dev", s.std_dev)?;
    Ok(out)
}

/// NLL scorer over a mock table (`mock:<path>`) or an HTTP endpoint
/// (`http:<url>`).
#[pyclass(name = "Scorer", module = "memaudit", frozen)]
struct PyScorer(memaudit::Scorer);

#[pymethods]
impl PyScorer {
    #[new]
    #[pyo3(signature = (provider, model, concurrency = 4, timeout_secs = 120.0, cache = None))]
    fn new(provider: &str, model: &str, concurrency: usize, timeout_secs: f64, cache: Option<PathBuf>) -> PyResult<Self> {
        let kind: ProviderKind = provider.parse().map_err(value_err)?;
        let mut cfg = memaudit::ProviderConfig::new(kind, model);
        cfg.max_concurrency = concurrency;
        cfg.timeout = Duration::from_secs_f64(timeout_secs);
        cfg.cache_path = cache;
        cfg.build().map(Self).map_err(value_err)
    }

    #[getter]
    fn model_id(&self) -> &str {
        self.0.model_id()
    }

    #[getter]
    fn upstream_calls(&self) -> usize {
        self.0.upstream_calls()
    }

    fn score<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let r = py.detach(|| self.0.score_text(text)).map_err(value_err)?;
        to_py(py, &r)
    }

    /// Total NLL per text; failures raise.
    fn batch_total_nll(&self, py: Python<'_>, texts: Vec<String>) -> PyResult<Vec<f64>> {
        py.detach(|| self.0.batch_score(&texts))
            .into_iter()
            .map(|r| r.map(|r| r.total_nll).map_err(value_err))
            .collect()
    }
}

/// Audits one subject–property pair; returns one record dict per template.
#[pyfunction]
#[pyo3(signature = (scorer, subject, pid, templates, ground_truths, counterfactuals, alpha = 1.0, name_variants = 4, cohort = None, dump_scores = false))]
#[allow(clippy::too_many_arguments)]
fn audit_pair<'py>(
    py: Python<'py>,
    scorer: &PyScorer,
    subject: &str,
    pid: &str,
    templates: Vec<PyTemplate>,
    ground_truths: Vec<String>,
    counterfactuals: Vec<String>,
    alpha: f64,
    name_variants: usize,
    cohort: Option<&str>,
    dump_scores: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cands = CandidateSet::from_overlapping(pid, &ground_truths, &counterfactuals).map_err(metric_err)?;
    let mut profile = SubjectProfile::new(subject);
    profile.cohort = cohort
        .map(|c| serde_json::from_value::<Cohort>(serde_json::Value::String(c.to_string())).map_err(|_| value_err(format!("unknown cohort {c:?}"))))
        .transpose()?;
    let templates: Vec<_> = templates.into_iter().map(|t| t.0).collect();
    let cfg = AuditConfig { alpha, name_variants, dump_scores, ..AuditConfig::default() };
    let records = py.detach(|| memaudit::audit_pair(&profile, pid, &templates, &cands, &scorer.0, &cfg));
    to_py(py, &records)
}

/// Cohort summaries of record dicts under `strict` or `lenient` aggregation.
#[pyfunction]
#[pyo3(signature = (records, mode = "strict"))]
fn aggregate<'py>(py: Python<'py>, records: &Bound<'py, PyAny>, mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let records: Vec<AuditRecord> = from_py(records)?;
    let mode: memaudit::AggregationMode = mode.parse().map_err(value_err)?;
    let agg = memaudit::aggregate(&records, mode);
    let out = PyDict::new(py);
    out.set_item("summaries", to_py(py, &agg.summaries)?)?;
    out.set_item("warnings", agg.warnings)?;
    Ok(out)
}

/// The plain-text results table for summary dicts.
#[pyfunction]
fn emit_table(summaries: &Bound<'_, PyAny>) -> PyResult<String> {
    let summaries: Vec<memaudit::CohortSummary> = from_py(summaries)?;
    Ok(memaudit::report::emit_table(&summaries))
}

/// Records from a JSONL file written by `audit run`.
#[pyfunction]
fn read_records<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let records = memaudit::pipeline::read_records(&path).map_err(|e| PyOSError::new_err(e.to_string()))?;
    to_py(py, &records)
}

#[pymodule]
#[pyo3(name = "memaudit")]
pub fn memaudit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyScorer>()?;
    m.add_function(wrap_pyfunction!(classify_form, m)?)?;
    m.add_function(wrap_pyfunction!(render_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(instantiate, m)?)?;
    m.add_function(wrap_pyfunction!(generic_subject, m)?)?;
    m.add_function(wrap_pyfunction!(contextualize, m)?)?;
    m.add_function(wrap_pyfunction!(similar_names, m)?)?;
    m.add_function(wrap_pyfunction!(calibrated_scores, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(strength, m)?)?;
    m.add_function(wrap_pyfunction!(audit_pair, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(emit_table, m)?)?;
    m.add_function(wrap_pyfunction!(read_records, m)?)?;
    m.add("SUBJECT", memaudit::canary::SUBJECT)?;
    m.add("VALUE", memaudit::canary::VALUE)?;
    Ok(())
}

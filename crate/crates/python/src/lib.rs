//! Python bindings for the alignment-pipeline toolkit.
//!
//! The module mirrors the offline-computable core surface: tokenization,
//! reward kernels, verification, mixture scheduling, report aggregation,
//! sample synthesis, and reasoning-trace checks. Rich structures cross the
//! boundary as plain dicts/lists (or JSON strings for whole samples), so no
//! Python-side schema code is required.
//!
//! Model-gateway operations are intentionally not exposed: loops, routing,
//! and judge calls live behind the Rust CLI where transcripts and endpoint
//! configs are handled uniformly.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use alignkit_core::curriculum::{
    sample_batch, stage1_mixture, stage2_mixture, BucketStats, MixtureSpec, MixtureTargets,
};
use alignkit_core::datamodel::{validate_sample, Message, Role, Sample as CoreSample};
use alignkit_core::evaluation::{aggregate_report, render_table, EvalReport};
use alignkit_core::gateway::request_hash as core_request_hash;
use alignkit_core::loops::parse_think_answer;
use alignkit_core::rewards::{
    composite_reward, compute_penalties, grpo_advantages as core_grpo, length_reward_bounds,
    ngram_overlap as core_ngram_overlap, repetition_penalty as core_repetition_penalty,
    verify_rule_based, PatternLibrary, RewardConfig, RewardPath,
};
use alignkit_core::synthesis::{
    check_standardized_cot as core_check_cot, format_knowledge_injection, BacktrackLexicon,
    KnowledgeQA,
};
use alignkit_core::text::tokenize as core_tokenize;

/// Converts any serializable core value into Python dicts/lists/scalars.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &json)
}

fn json_to_py(py: Python<'_>, value: &Value) -> PyResult<Py<PyAny>> {
    match value {
        Value::Null => Ok(py.None()),
        Value::Bool(b) => b.into_py_any(py),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)
            }
        }
        Value::String(s) => s.into_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// ---------------------------------------------------------------------------
// Scalars and text
// ---------------------------------------------------------------------------

/// Toolkit version string.
#[pyfunction]
fn version() -> &'static str {
    alignkit_core::VERSION
}

/// Splits text on whitespace and punctuation — the documented token unit
/// for lengths and n-grams.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    core_tokenize(text).into_iter().map(str::to_string).collect()
}

/// Conditional length reward: 1 at or below `l_min`, 0 at or above `l_max`,
/// linear in between.
#[pyfunction]
#[pyo3(signature = (length_tokens, l_min=100, l_max=1000))]
fn length_reward(length_tokens: u32, l_min: u32, l_max: u32) -> f64 {
    length_reward_bounds(length_tokens, l_min, l_max)
}

/// Fraction of the response's n-grams that also occur in the context.
#[pyfunction]
#[pyo3(signature = (response, context, n=8))]
fn ngram_overlap(response: &str, context: &str, n: usize) -> f64 {
    core_ngram_overlap(response, context, n)
}

/// 1 − distinct/total n-grams; 0 for fully distinct text.
#[pyfunction]
#[pyo3(signature = (text, n=8))]
fn repetition_penalty(text: &str, n: usize) -> f64 {
    core_repetition_penalty(text, n)
}

/// Group-relative advantages: `(r − mean) / population_std`; all zeros for
/// (near-)constant groups.
#[pyfunction]
fn grpo_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    core_grpo(&rewards).map_err(value_error)
}

// ---------------------------------------------------------------------------
// Verification and rewards
// ---------------------------------------------------------------------------

/// Rule-based verification (exact → pattern → numeric) of an answer against
/// gold. Returns a dict with `verdict`, `match_kind`, `extracted`, `pattern`.
#[pyfunction]
#[pyo3(signature = (answer, gold, numeric_tol=1e-6))]
fn verify(py: Python<'_>, answer: &str, gold: &str, numeric_tol: f64) -> PyResult<Py<PyAny>> {
    let outcome = verify_rule_based(answer, gold, PatternLibrary::builtin(), numeric_tol);
    to_py(py, &outcome)
}

fn reward_config(config_toml: Option<&str>) -> PyResult<RewardConfig> {
    let cfg: RewardConfig = match config_toml {
        Some(raw) => toml::from_str(raw).map_err(value_error)?,
        None => RewardConfig::default(),
    };
    cfg.validate().map_err(value_error)?;
    Ok(cfg)
}

/// Scores one response against a gold answer: verification, penalties, and
/// the accuracy-gated composite. Mirrors `alignkit reward score` row for
/// row. `config_toml` carries reward settings; omitted keys keep defaults.
#[pyfunction]
#[pyo3(signature = (response, gold, context=None, config_toml=None))]
fn score_response(
    py: Python<'_>,
    response: &str,
    gold: &str,
    context: Option<&str>,
    config_toml: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let cfg = reward_config(config_toml)?;
    let (_think, answer) = parse_think_answer(response);
    let outcome = verify_rule_based(&answer, gold, PatternLibrary::builtin(), cfg.numeric_tol);
    let penalties = compute_penalties(response, context, None, &cfg);
    let length = core_tokenize(response).len() as u32;
    let signal = composite_reward(RewardPath::Verifiable(&outcome), length, &penalties, &cfg)
        .map_err(value_error)?;

    let mut row = serde_json::to_value(&signal).map_err(value_error)?;
    let obj = row.as_object_mut().expect("signal serializes to an object");
    obj.insert("verdict".into(), serde_json::to_value(outcome.verdict).map_err(value_error)?);
    obj.insert(
        "match_kind".into(),
        serde_json::to_value(outcome.match_kind).map_err(value_error)?,
    );
    json_to_py(py, &row)
}

// ---------------------------------------------------------------------------
// Curriculum
// ---------------------------------------------------------------------------

fn parse_mixture_inputs(
    stats_json: &str,
    targets_toml: Option<&str>,
) -> PyResult<(Vec<BucketStats>, MixtureTargets)> {
    let stats: Vec<BucketStats> = serde_json::from_str(stats_json).map_err(value_error)?;
    let targets: MixtureTargets = match targets_toml {
        Some(raw) => toml::from_str(raw).map_err(value_error)?,
        None => MixtureTargets::default(),
    };
    Ok((stats, targets))
}

fn build_mixture(
    stats: &[BucketStats],
    targets: &MixtureTargets,
    stage: u8,
    boost: f64,
) -> PyResult<MixtureSpec> {
    match stage {
        1 => stage1_mixture(stats, targets).map_err(value_error),
        2 => stage2_mixture(stats, targets, boost).map_err(value_error),
        other => Err(PyValueError::new_err(format!("stage must be 1 or 2, got {other}"))),
    }
}

/// Computes mixture weights from bucket statistics. `stats_json` is a JSON
/// array of `{bucket_id, category, count}`; returns a dict with `stage`,
/// `weights`, and `constraints_satisfied`.
#[pyfunction]
#[pyo3(signature = (stats_json, stage=2, boost=1.0, targets_toml=None))]
fn mixture_weights(
    py: Python<'_>,
    stats_json: &str,
    stage: u8,
    boost: f64,
    targets_toml: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let (stats, targets) = parse_mixture_inputs(stats_json, targets_toml)?;
    let spec = build_mixture(&stats, &targets, stage, boost)?;
    to_py(py, &spec)
}

/// Draws `batch_size` bucket ids from the mixture for `stats_json`,
/// deterministically from `seed`.
#[pyfunction]
#[pyo3(signature = (stats_json, batch_size, seed, stage=2, boost=1.0, targets_toml=None))]
fn draw_batch(
    stats_json: &str,
    batch_size: usize,
    seed: u64,
    stage: u8,
    boost: f64,
    targets_toml: Option<&str>,
) -> PyResult<Vec<String>> {
    let (stats, targets) = parse_mixture_inputs(stats_json, targets_toml)?;
    let spec = build_mixture(&stats, &targets, stage, boost)?;
    sample_batch(&spec, &stats, batch_size, seed).map_err(value_error)
}

// ---------------------------------------------------------------------------
// Evaluation arithmetic
// ---------------------------------------------------------------------------

/// Aggregates per-group score lists into a report dict with group averages
/// and the two-group average when both `insurance` and `general` exist.
#[pyfunction]
fn report_from_groups(
    py: Python<'_>,
    model_id: &str,
    groups: BTreeMap<String, Vec<f64>>,
) -> PyResult<Py<PyAny>> {
    let report = aggregate_report(model_id, &groups).map_err(value_error)?;
    to_py(py, &report)
}

/// Renders report dicts (JSON array) as the aligned leaderboard table.
#[pyfunction]
fn render_report_table(reports_json: &str) -> PyResult<String> {
    let reports: Vec<EvalReport> = serde_json::from_str(reports_json).map_err(value_error)?;
    Ok(render_table(&reports))
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Builds a knowledge-injection sample (empty think tags, rote QA) and
/// returns it as a [`Sample`].
#[pyfunction]
fn knowledge_sample(question: &str, answer: &str, source: &str) -> PyResult<Sample> {
    let qa = KnowledgeQA {
        question: question.to_string(),
        answer: answer.to_string(),
        source: source.to_string(),
    };
    let sample = format_knowledge_injection(&qa).map_err(value_error)?;
    Ok(Sample { inner: sample })
}

/// Checks a reasoning trace for standardized form: contiguous numbering
/// from 1 and no backtracking phrases. Returns `{linear, steps, violations}`.
#[pyfunction]
fn check_standardized_cot(py: Python<'_>, cot: &str) -> PyResult<Py<PyAny>> {
    let check = core_check_cot(cot, BacktrackLexicon::builtin());
    to_py(py, &check)
}

// ---------------------------------------------------------------------------
// Gateway interop
// ---------------------------------------------------------------------------

/// Computes the transcript key for a chat request given `(role, content)`
/// message pairs — what a scripted transcript line's `request_hash` must be.
#[pyfunction]
fn request_hash(messages: Vec<(String, String)>) -> PyResult<String> {
    let messages: Vec<Message> = messages
        .into_iter()
        .map(|(role, content)| {
            let role = match role.as_str() {
                "system" => Role::System,
                "user" => Role::User,
                "assistant" => Role::Assistant,
                other => return Err(PyValueError::new_err(format!("unknown role `{other}`"))),
            };
            Ok(Message { role, content })
        })
        .collect::<PyResult<_>>()?;
    Ok(core_request_hash(&messages))
}

// ---------------------------------------------------------------------------
// Sample class
// ---------------------------------------------------------------------------

/// One dataset sample in the canonical schema, wrapped for Python access.
#[pyclass(module = "alignkit")]
#[derive(Clone)]
struct Sample {
    inner: CoreSample,
}

#[pymethods]
impl Sample {
    /// Parses a sample from its JSON representation (one JSONL line).
    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Sample> {
        let inner: CoreSample = serde_json::from_str(json).map_err(value_error)?;
        Ok(Sample { inner })
    }

    /// Serializes back to the canonical JSON representation.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_error)
    }

    /// The sample as nested dicts/lists.
    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    /// Schema violations as `code: detail` strings; empty means valid.
    fn validate(&self) -> Vec<String> {
        validate_sample(&self.inner)
            .into_iter()
            .map(|v| format!("{}: {}", v.code, v.detail))
            .collect()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn task_type(&self) -> String {
        self.inner.task_type.clone()
    }

    #[getter]
    fn business_area(&self) -> &'static str {
        self.inner.business_area.code()
    }

    #[getter]
    fn format(&self) -> &'static str {
        self.inner.format.as_str()
    }

    #[getter]
    fn difficulty(&self) -> &'static str {
        self.inner.difficulty.as_str()
    }

    #[getter]
    fn bucket(&self) -> &'static str {
        self.inner.bucket.as_str()
    }

    #[getter]
    fn think(&self) -> Option<String> {
        self.inner.think.clone()
    }

    #[getter]
    fn answer(&self) -> String {
        self.inner.answer.clone()
    }

    #[getter]
    fn context(&self) -> Option<String> {
        self.inner.context.clone()
    }

    /// Message turns as `(role, content)` pairs.
    #[getter]
    fn messages(&self) -> Vec<(&'static str, String)> {
        self.inner
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                (role, m.content.clone())
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sample(id={:?}, area={}, format={}, bucket={})",
            self.inner.id,
            self.inner.business_area.code(),
            self.inner.format.as_str(),
            self.inner.bucket.as_str()
        )
    }
}

#[pymodule]
fn alignkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", alignkit_core::VERSION)?;
    m.add_class::<Sample>()?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(length_reward, m)?)?;
    m.add_function(wrap_pyfunction!(ngram_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(repetition_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(grpo_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(score_response, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_weights, m)?)?;
    m.add_function(wrap_pyfunction!(draw_batch, m)?)?;
    m.add_function(wrap_pyfunction!(report_from_groups, m)?)?;
    m.add_function(wrap_pyfunction!(render_report_table, m)?)?;
    m.add_function(wrap_pyfunction!(knowledge_sample, m)?)?;
    m.add_function(wrap_pyfunction!(check_standardized_cot, m)?)?;
    m.add_function(wrap_pyfunction!(request_hash, m)?)?;
    Ok(())
}

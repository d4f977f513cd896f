//! Evaluation harness.
//!
//! Scores model responses against eval items — rule-verified accuracy with
//! judge escalation for free-form answers, and rubric-judged faithfulness
//! for open-ended ones — then aggregates per-dimension scores, group
//! averages, and the combined two-group average into reports. Every scored
//! item lands in a deterministic JSONL ledger (sorted by item id, judge
//! request hashes recorded) so a rerun against the same transcript is
//! byte-identical.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DataError, Message, Role, Sample, SampleFormat};
use crate::gateway::{request_hash, GatewayError, ModelGateway, RubricSpec};
use crate::rewards::{verify_rule_based, MatchKind, PatternLibrary, Verdict};

/// Errors from evaluation.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("item {id}: metric {metric:?} cannot score format {format:?}")]
    MetricFormatMismatch { id: String, metric: Metric, format: SampleFormat },
    #[error("item {id}: accuracy scoring requires a gold answer")]
    MissingGold { id: String },
    #[error("item {id}: weight must be positive and finite, got {weight}")]
    InvalidWeight { id: String, weight: f64 },
    #[error("group `{group}` has no scores to average")]
    EmptyGroup { group: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

/// What an item measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Deterministic correctness against the gold answer, judge-escalated
    /// only when rules cannot parse the response.
    Accuracy,
    /// Rubric-judged groundedness of an open-ended response.
    Faithfulness,
}

/// One evaluation item: a sample, the metric to score it with, and its
/// weight in aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub sample: Sample,
    pub metric: Metric,
    pub weight: f64,
}

impl EvalItem {
    /// Default metric per format: choice and extraction tasks are verified
    /// for accuracy; open-ended and dialogue tasks are judged for
    /// faithfulness. Weight defaults to 1.
    pub fn from_sample(sample: Sample) -> EvalItem {
        let metric = match sample.format {
            SampleFormat::MultipleChoice | SampleFormat::Extraction => Metric::Accuracy,
            SampleFormat::OpenEnded | SampleFormat::Dialogue => Metric::Faithfulness,
        };
        EvalItem { sample, metric, weight: 1.0 }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !self.weight.is_finite() || self.weight <= 0.0 {
            return Err(EvalError::InvalidWeight { id: self.sample.id.clone(), weight: self.weight });
        }
        match (self.metric, self.sample.format) {
            (Metric::Accuracy, SampleFormat::MultipleChoice | SampleFormat::Extraction) => {
                if self.sample.answer.trim().is_empty() {
                    return Err(EvalError::MissingGold { id: self.sample.id.clone() });
                }
                Ok(())
            }
            (Metric::Faithfulness, SampleFormat::OpenEnded | SampleFormat::Dialogue) => Ok(()),
            (metric, format) => {
                Err(EvalError::MetricFormatMismatch { id: self.sample.id.clone(), metric, format })
            }
        }
    }
}

/// Score for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    /// 0..=1.
    pub score: f64,
    /// How an accuracy verdict matched; `None` kind for faithfulness.
    pub match_kind: MatchKind,
    /// Request hash of the judge call, when one was needed.
    pub judge_hash: Option<String>,
    /// Raw rubric values or verifier detail, for audit.
    pub detail: Option<String>,
}

fn prompt_turns(sample: &Sample) -> Vec<Message> {
    let mut msgs = sample.messages.clone();
    while msgs.last().is_some_and(|m| m.role == Role::Assistant) {
        msgs.pop();
    }
    msgs
}

/// Scores one response against one item.
///
/// Accuracy runs the rule cascade first; only unparseable responses escalate
/// to the equivalence judge, whose request hash is recorded. Faithfulness
/// grades the transcript (prompt turns plus the response) against the
/// default quality rubric under the sample's context; the score is the
/// factuality dimension alone and the rubric request hash is recorded.
pub fn score_item(
    gateway: &ModelGateway,
    item: &EvalItem,
    response: &str,
) -> Result<ItemScore, EvalError> {
    item.validate()?;
    let sample = &item.sample;
    match item.metric {
        Metric::Accuracy => {
            let (_, answer) = crate::loops::parse_think_answer(response);
            let rule = verify_rule_based(&answer, &sample.answer, PatternLibrary::builtin(), 1e-6);
            if rule.verdict != Verdict::Unparsed {
                return Ok(ItemScore {
                    score: if rule.verdict == Verdict::Correct { 1.0 } else { 0.0 },
                    match_kind: rule.match_kind,
                    judge_hash: None,
                    detail: rule.detail,
                });
            }
            let judge_msgs = gateway.equivalence_messages(&answer, &sample.answer);
            let judge_hash = Some(request_hash(&judge_msgs));
            let outcome = crate::rewards::verify_with_escalation(
                gateway,
                &answer,
                &sample.answer,
                PatternLibrary::builtin(),
                1e-6,
            );
            Ok(ItemScore {
                score: if outcome.verdict == Verdict::Correct { 1.0 } else { 0.0 },
                match_kind: outcome.match_kind,
                judge_hash,
                detail: outcome.detail,
            })
        }
        Metric::Faithfulness => {
            let mut transcript = prompt_turns(sample);
            transcript.push(Message::assistant(response));
            let rubric = RubricSpec::default_quality();
            let msgs = gateway.rubric_messages(&transcript, sample.context.as_deref(), &rubric);
            let judge_hash = Some(request_hash(&msgs));
            let dims = gateway.judge_rubric(&transcript, sample.context.as_deref(), &rubric)?;
            let score = dims.get("factuality").copied().unwrap_or(0.0);
            let detail = serde_json::to_string(&dims).ok();
            Ok(ItemScore { score, match_kind: MatchKind::None, judge_hash, detail })
        }
    }
}

/// Outcome of one ledger row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LedgerOutcome {
    Scored {
        score: f64,
        match_kind: MatchKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        judge_hash: Option<String>,
    },
    Unscored {
        reason: String,
    },
    MissingResponse,
}

/// One evaluation ledger row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub id: String,
    pub business_area: crate::datamodel::BusinessArea,
    pub metric: Metric,
    pub weight: f64,
    #[serde(flatten)]
    pub outcome: LedgerOutcome,
}

/// Scores every item against its response in parallel (bounded by the
/// gateway's in-flight cap) and returns ledger rows sorted by item id.
/// Items without a response get `MissingResponse`; scoring failures become
/// `Unscored` rows rather than aborting the run.
pub fn run_eval_items(
    gateway: &ModelGateway,
    items: &[EvalItem],
    responses: &BTreeMap<String, String>,
) -> Vec<LedgerRow> {
    let mut rows: Vec<LedgerRow> = items
        .par_iter()
        .map(|item| {
            let outcome = match responses.get(&item.sample.id) {
                None => LedgerOutcome::MissingResponse,
                Some(resp) => match score_item(gateway, item, resp) {
                    Ok(s) => LedgerOutcome::Scored {
                        score: s.score,
                        match_kind: s.match_kind,
                        judge_hash: s.judge_hash,
                    },
                    Err(e) => LedgerOutcome::Unscored { reason: e.to_string() },
                },
            };
            LedgerRow {
                id: item.sample.id.clone(),
                business_area: item.sample.business_area,
                metric: item.metric,
                weight: item.weight,
                outcome,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    rows
}

/// Writes ledger rows as JSONL (atomically: temp file, then rename).
pub fn write_ledger(path: &Path, rows: &[LedgerRow]) -> Result<(), EvalError> {
    let display = path.display().to_string();
    let io_err = |source: std::io::Error| EvalError::Io { path: display.clone(), source };
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(io_err)?);
        for row in rows {
            serde_json::to_writer(&mut f, row).map_err(|e| EvalError::Malformed {
                path: display.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            f.write_all(b"\n").map_err(io_err)?;
        }
        f.flush().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Reads a JSONL ledger back.
pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>, EvalError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| EvalError::Io { path: display.clone(), source })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: LedgerRow = serde_json::from_str(line).map_err(|e| EvalError::Malformed {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads model responses from JSONL lines of `{"id": ..., "response": ...}`.
/// Duplicate ids are an error — a response file must be unambiguous.
pub fn read_responses(path: &Path) -> Result<BTreeMap<String, String>, EvalError> {
    #[derive(Deserialize)]
    struct Line {
        id: String,
        response: String,
    }
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| EvalError::Io { path: display.clone(), source })?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(line).map_err(|e| EvalError::Malformed {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(parsed.id.clone(), parsed.response).is_some() {
            return Err(EvalError::Malformed {
                path: display.clone(),
                line: i + 1,
                message: format!("duplicate response id `{}`", parsed.id),
            });
        }
    }
    Ok(out)
}

/// Aggregated evaluation report. Scores are percentages (0–100), rounded
/// only at presentation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    /// Business-area code → weighted mean score × 100.
    pub dimension_scores: BTreeMap<String, f64>,
    /// Group label → unweighted mean score.
    pub group_avgs: BTreeMap<String, f64>,
    /// Mean of the insurance and general group averages, when both exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_avg: Option<f64>,
}

/// Aggregates scored ledger rows into per-business-area percentages:
/// weighted mean of scores × 100. Areas with no scored rows are omitted.
pub fn aggregate_dimensions(rows: &[LedgerRow]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for row in rows {
        if let LedgerOutcome::Scored { score, .. } = &row.outcome {
            let entry = acc.entry(row.business_area.code()).or_insert((0.0, 0.0));
            entry.0 += score * row.weight;
            entry.1 += row.weight;
        }
    }
    acc.into_iter()
        .filter(|(_, (_, w))| *w > 0.0)
        .map(|(code, (sw, w))| (code.to_string(), 100.0 * sw / w))
        .collect()
}

/// Builds a run report from ledger rows: dimension percentages plus an
/// overall average across scored rows under the key `overall`.
pub fn report_from_rows(model_id: &str, rows: &[LedgerRow]) -> EvalReport {
    let dimension_scores = aggregate_dimensions(rows);
    let mut group_avgs = BTreeMap::new();
    let scored: Vec<f64> = rows
        .iter()
        .filter_map(|r| match &r.outcome {
            LedgerOutcome::Scored { score, .. } => Some(*score * 100.0),
            _ => None,
        })
        .collect();
    if !scored.is_empty() {
        group_avgs.insert("overall".to_string(), scored.iter().sum::<f64>() / scored.len() as f64);
    }
    EvalReport { model_id: model_id.to_string(), dimension_scores, group_avgs, two_avg: None }
}

/// Group labels whose averages combine into the two-group average.
pub const TWO_AVG_GROUPS: [&str; 2] = ["insurance", "general"];

/// Aggregates per-benchmark scores (already 0–100) into group averages and,
/// when both the insurance and general groups are present, their combined
/// mean. Group means are unweighted. An empty group is an error.
pub fn aggregate_report(
    model_id: &str,
    groups: &BTreeMap<String, Vec<f64>>,
) -> Result<EvalReport, EvalError> {
    let mut group_avgs = BTreeMap::new();
    for (label, scores) in groups {
        if scores.is_empty() {
            return Err(EvalError::EmptyGroup { group: label.clone() });
        }
        group_avgs.insert(label.clone(), scores.iter().sum::<f64>() / scores.len() as f64);
    }
    let two_avg = match (group_avgs.get(TWO_AVG_GROUPS[0]), group_avgs.get(TWO_AVG_GROUPS[1])) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        _ => None,
    };
    Ok(EvalReport { model_id: model_id.to_string(), dimension_scores: BTreeMap::new(), group_avgs, two_avg })
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Renders reports as an aligned text table. Columns are the union of
/// dimension codes, then group labels, then `Two Avg.`; missing cells show
/// `-`. Values are rounded to two decimals at render time only.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut dim_cols: Vec<String> = Vec::new();
    let mut group_cols: Vec<String> = Vec::new();
    for r in reports {
        for k in r.dimension_scores.keys() {
            if !dim_cols.contains(k) {
                dim_cols.push(k.clone());
            }
        }
        for k in r.group_avgs.keys() {
            if !group_cols.contains(k) {
                group_cols.push(k.clone());
            }
        }
    }
    dim_cols.sort();
    group_cols.sort();
    let any_two = reports.iter().any(|r| r.two_avg.is_some());

    let mut header: Vec<String> = vec!["Model".to_string()];
    header.extend(dim_cols.iter().cloned());
    header.extend(group_cols.iter().map(|g| format!("{g} avg.")));
    if any_two {
        header.push("Two Avg.".to_string());
    }

    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", round2(x)));
    let mut rows: Vec<Vec<String>> = vec![header];
    for r in reports {
        let mut row = vec![r.model_id.clone()];
        row.extend(dim_cols.iter().map(|c| fmt(r.dimension_scores.get(c).copied())));
        row.extend(group_cols.iter().map(|c| fmt(r.group_avgs.get(c).copied())));
        if any_two {
            row.push(fmt(r.two_avg));
        }
        rows.push(row);
    }

    let ncols = rows[0].len();
    let widths: Vec<usize> = (0..ncols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> =
            row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let sep: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(sep.join("  ").trim_end());
            out.push('\n');
        }
    }
    out
}

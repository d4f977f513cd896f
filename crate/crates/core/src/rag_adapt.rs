//! Retrieval-grounded data adaptation.
//!
//! Takes document/question/answer triples, routes each through a consistency
//! validator (does the document actually support the answer?), and lands the
//! result in one of three buckets: supported answers are kept for generation
//! training, unsupported ones are converted to refusals, and validator
//! failures are quarantined for manual review. Atomic capability tasks
//! (boundary identification, knowledge selection, summarization, self-check)
//! are built from the same raw material.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    assistant_content, BusinessArea, Bucket, Difficulty, Message, Pipeline, Provenance, Sample,
    SampleFormat, ValidatorVerdict,
};
use crate::gateway::{ChatRequest, ModelGateway, RequestMode};
use crate::text::{derive_rng, short_hash};

/// Errors from RAG adaptation.
#[derive(Debug, Error)]
pub enum RagError {
    #[error("{kind:?} tasks require {need}")]
    MissingIngredient { kind: AtomicTaskKind, need: &'static str },
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
}

/// Atomic retrieval-capability task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomicTaskKind {
    /// Decide whether the documents can answer the question at all.
    BoundaryId,
    /// Pick the passage that answers the question out of distractors.
    KnowledgeSelection,
    /// Summarize a document faithfully.
    Summarization,
    /// Check a claim against a document.
    SelfCheck,
}

impl AtomicTaskKind {
    pub const ALL: [AtomicTaskKind; 4] = [
        AtomicTaskKind::BoundaryId,
        AtomicTaskKind::KnowledgeSelection,
        AtomicTaskKind::Summarization,
        AtomicTaskKind::SelfCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AtomicTaskKind::BoundaryId => "boundary_id",
            AtomicTaskKind::KnowledgeSelection => "knowledge_selection",
            AtomicTaskKind::Summarization => "summarization",
            AtomicTaskKind::SelfCheck => "self_check",
        }
    }
}

/// One raw QA record to route, as read from ingest JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagIngestRecord {
    /// Grounding document the answer is supposed to rest on.
    pub doc: String,
    pub question: String,
    pub answer: String,
    /// Upstream answerability flag, carried through for audit; routing
    /// decisions come from the validator, not this bit.
    #[serde(default)]
    pub answerable: Option<bool>,
}

/// Routing decision for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub sample_id: String,
    pub verdict: ValidatorVerdict,
    pub bucket: Bucket,
    /// Raw validator output (or failure description) for audit.
    pub detail: String,
}

/// Maps a validator verdict to its destination bucket: supported answers
/// train generation, unsupported ones train refusal, failures quarantine.
pub fn bucket_for(verdict: ValidatorVerdict) -> Bucket {
    match verdict {
        ValidatorVerdict::Consistent => Bucket::Generation,
        ValidatorVerdict::Inconsistent => Bucket::Refusal,
        ValidatorVerdict::Error => Bucket::Quarantine,
    }
}

/// Canned refusal answer used for inconsistent records.
pub const REFUSAL_ANSWER: &str =
    "[REFUSE] The provided context does not support a reliable answer to this question.";

const VALIDATOR_SYSTEM: &str = "You check whether an answer to a question is fully supported by a \
document. Reply with exactly one word: CONSISTENT if every claim in the answer is supported by \
the document, INCONSISTENT otherwise.";

/// Messages for the consistency validator; public so runs can be scripted.
pub fn validator_messages(question: &str, answer: &str, doc: &str) -> Vec<Message> {
    vec![
        Message::system(VALIDATOR_SYSTEM),
        Message::user(format!(
            "Document:\n{doc}\n\nQuestion: {question}\n\nAnswer: {answer}\n\n\
             Is the answer fully supported by the document? Reply CONSISTENT or INCONSISTENT."
        )),
    ]
}

fn parse_validator(content: &str) -> Option<ValidatorVerdict> {
    // Same convention as the equivalence judge: the last recognizable token
    // decides, so chatty validators still parse.
    let upper = content.to_uppercase();
    let mut verdict = None;
    for tok in upper.split(|c: char| !c.is_ascii_alphabetic()) {
        match tok {
            "CONSISTENT" => verdict = Some(ValidatorVerdict::Consistent),
            "INCONSISTENT" => verdict = Some(ValidatorVerdict::Inconsistent),
            _ => {}
        }
    }
    verdict
}

/// Stable id for a routed record.
pub fn rag_sample_id(question: &str) -> String {
    format!("rag-{}", short_hash(&[question]))
}

/// Routes one record through the consistency validator. Total: gateway
/// failures and unparseable validator output become `ValidatorVerdict::Error`
/// (quarantine) rather than propagating.
pub fn route_rag_sample(gateway: &ModelGateway, record: &RagIngestRecord) -> RoutingDecision {
    let sample_id = rag_sample_id(&record.question);
    let req = ChatRequest {
        model: gateway.models().judge.clone(),
        messages: validator_messages(&record.question, &record.answer, &record.doc),
        temperature: 0.0,
        max_tokens: 16,
        mode: RequestMode::JudgeDirect,
    };
    let (verdict, detail) = match gateway.complete(&req) {
        Ok(resp) => match parse_validator(&resp.content) {
            Some(v) => (v, resp.content),
            None => (
                ValidatorVerdict::Error,
                format!("unparseable validator output: {}", resp.content),
            ),
        },
        Err(e) => (ValidatorVerdict::Error, format!("gateway failure: {e}")),
    };
    RoutingDecision { sample_id, verdict, bucket: bucket_for(verdict), detail }
}

/// Materializes the routed sample for a decision. Generation keeps the
/// original answer; refusal swaps in the canned refusal; quarantine keeps
/// the answer (bucket isolation is what keeps it out of training).
pub fn routed_sample(record: &RagIngestRecord, decision: &RoutingDecision) -> Sample {
    let answer = match decision.bucket {
        Bucket::Refusal => REFUSAL_ANSWER.to_string(),
        _ => record.answer.clone(),
    };
    Sample {
        id: decision.sample_id.clone(),
        task_type: "rag_qa".to_string(),
        business_area: BusinessArea::IDK,
        format: SampleFormat::OpenEnded,
        difficulty: Difficulty::Simple,
        messages: vec![
            Message::user(record.question.clone()),
            Message::assistant(assistant_content(None, &answer)),
        ],
        think: None,
        answer,
        context: Some(record.doc.clone()),
        bucket: decision.bucket,
        provenance: Provenance {
            source: "rag_ingest".to_string(),
            pipeline: Pipeline::RagAdaptation,
            iteration: 0,
            validator_verdict: Some(decision.verdict),
        },
    }
}

/// Routes a batch and materializes each sample; order follows the input.
pub fn route_rag_batch(
    gateway: &ModelGateway,
    records: &[RagIngestRecord],
) -> Vec<(RoutingDecision, Sample)> {
    use rayon::prelude::*;
    records
        .par_iter()
        .map(|r| {
            let d = route_rag_sample(gateway, r);
            let s = routed_sample(r, &d);
            (d, s)
        })
        .collect()
}

/// Builds one atomic retrieval-capability sample.
///
/// Ingredients per kind:
/// - `BoundaryId`: `qa` required — the question plus a document that does
///   NOT answer it; gold behavior is refusal.
/// - `KnowledgeSelection`: `qa` plus at least one distractor passage; the
///   context shuffles gold and distractors deterministically from
///   `dataset_seed`.
/// - `Summarization`: `doc` only; `qa.answer` (when given) is the reference
///   summary, otherwise the sample ships unanswered for later completion.
/// - `SelfCheck`: `qa` required — `qa.answer` is the claim to check against
///   the document; ships unanswered.
pub fn build_atomic_task(
    kind: AtomicTaskKind,
    doc: &str,
    qa: Option<(&str, &str)>,
    distractors: &[String],
    dataset_seed: u64,
) -> Result<Sample, RagError> {
    if doc.trim().is_empty() {
        return Err(RagError::EmptyField("doc"));
    }
    let id_key = qa.map(|(q, _)| q).unwrap_or(doc);
    let id = format!("atomic-{}-{}", kind.as_str(), short_hash(&[kind.as_str(), id_key]));

    let sample = match kind {
        AtomicTaskKind::BoundaryId => {
            let (question, _) = qa.ok_or(RagError::MissingIngredient {
                kind,
                need: "a question the document cannot answer",
            })?;
            if question.trim().is_empty() {
                return Err(RagError::EmptyField("question"));
            }
            Sample {
                id,
                task_type: "atomic_boundary_id".to_string(),
                business_area: BusinessArea::ISC,
                format: SampleFormat::OpenEnded,
                difficulty: Difficulty::Simple,
                messages: vec![
                    Message::user(format!(
                        "Using only the provided context, answer the question. If the context \
                         cannot answer it, say so.\n\nQuestion: {question}"
                    )),
                    Message::assistant(assistant_content(None, REFUSAL_ANSWER)),
                ],
                think: None,
                answer: REFUSAL_ANSWER.to_string(),
                context: Some(doc.to_string()),
                bucket: Bucket::Refusal,
                provenance: Provenance {
                    source: "atomic_rag".to_string(),
                    pipeline: Pipeline::AtomicRag,
                    iteration: 0,
                    validator_verdict: None,
                },
            }
        }
        AtomicTaskKind::KnowledgeSelection => {
            let (question, answer) = qa.ok_or(RagError::MissingIngredient {
                kind,
                need: "a question answered by the gold passage",
            })?;
            if question.trim().is_empty() {
                return Err(RagError::EmptyField("question"));
            }
            if distractors.is_empty() {
                return Err(RagError::MissingIngredient {
                    kind,
                    need: "at least one distractor passage",
                });
            }
            // Shuffle gold + distractors so the gold passage position is not
            // a constant; seeded per sample id for reproducibility.
            let mut passages: Vec<&str> = Vec::with_capacity(distractors.len() + 1);
            passages.push(doc);
            passages.extend(distractors.iter().map(String::as_str));
            let mut rng = derive_rng(dataset_seed, &id);
            use rand::seq::SliceRandom;
            passages.shuffle(&mut rng);
            let context = passages
                .iter()
                .enumerate()
                .map(|(i, p)| format!("[Passage {}]\n{p}", i + 1))
                .collect::<Vec<_>>()
                .join("\n\n");
            Sample {
                id,
                task_type: "atomic_knowledge_selection".to_string(),
                business_area: BusinessArea::IDK,
                format: SampleFormat::Extraction,
                difficulty: Difficulty::Simple,
                messages: vec![
                    Message::user(format!(
                        "Several passages are provided as context. Answer the question using \
                         only the passage that actually contains the answer.\n\nQuestion: {question}"
                    )),
                    Message::assistant(assistant_content(None, answer)),
                ],
                think: None,
                answer: answer.to_string(),
                context: Some(context),
                bucket: Bucket::Generation,
                provenance: Provenance {
                    source: "atomic_rag".to_string(),
                    pipeline: Pipeline::AtomicRag,
                    iteration: 0,
                    validator_verdict: None,
                },
            }
        }
        AtomicTaskKind::Summarization => {
            let reference = qa.map(|(_, a)| a).unwrap_or("");
            let mut messages = vec![Message::user(
                "Summarize the provided context in three sentences or fewer, using only \
                 information it contains."
                    .to_string(),
            )];
            if !reference.is_empty() {
                messages.push(Message::assistant(assistant_content(None, reference)));
            }
            Sample {
                id,
                task_type: "atomic_summarization".to_string(),
                business_area: BusinessArea::IMG,
                format: SampleFormat::OpenEnded,
                difficulty: Difficulty::Simple,
                messages,
                think: None,
                answer: reference.to_string(),
                context: Some(doc.to_string()),
                bucket: Bucket::Generation,
                provenance: Provenance {
                    source: "atomic_rag".to_string(),
                    pipeline: Pipeline::AtomicRag,
                    iteration: 0,
                    validator_verdict: None,
                },
            }
        }
        AtomicTaskKind::SelfCheck => {
            let (_, claim) = qa.ok_or(RagError::MissingIngredient {
                kind,
                need: "a claim to check against the document",
            })?;
            if claim.trim().is_empty() {
                return Err(RagError::EmptyField("claim"));
            }
            Sample {
                id,
                task_type: "atomic_self_check".to_string(),
                business_area: BusinessArea::ISC,
                format: SampleFormat::OpenEnded,
                difficulty: Difficulty::Simple,
                messages: vec![Message::user(format!(
                    "Check the following claim against the provided context. State whether it \
                     is supported, contradicted, or not covered, and cite the relevant \
                     part.\n\nClaim: {claim}"
                ))],
                think: None,
                answer: String::new(),
                context: Some(doc.to_string()),
                bucket: Bucket::Generation,
                provenance: Provenance {
                    source: "atomic_rag".to_string(),
                    pipeline: Pipeline::AtomicRag,
                    iteration: 0,
                    validator_verdict: None,
                },
            }
        }
    };
    Ok(sample)
}

/// Parses ingest records from JSONL text; line numbers are 1-based in errors.
pub fn parse_ingest_jsonl(text: &str) -> Result<Vec<RagIngestRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RagIngestRecord =
            serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if record.question.trim().is_empty() {
            return Err(format!("line {}: question must not be empty", i + 1));
        }
        if record.doc.trim().is_empty() {
            return Err(format!("line {}: doc must not be empty", i + 1));
        }
        out.push(record);
    }
    Ok(out)
}

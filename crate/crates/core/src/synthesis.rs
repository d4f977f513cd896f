//! Verifiable data synthesis: knowledge injection pairs, perturbation-based
//! multiple choice with SOP reasoning, SOP chain-of-thought cases, and the
//! standardized-CoT linter.
//!
//! Builders are deterministic given their inputs plus a dataset seed, and
//! every output passes [`crate::datamodel::validate_sample`]. Reasoning is
//! always serialized the same way: `<think>…</think>` followed by a newline
//! and the answer, with empty tags for rote recall.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::datamodel::{
    assistant_content, BusinessArea, Bucket, Difficulty, Message, Pipeline, Provenance, Sample,
    SampleFormat,
};
use crate::text::{derive_rng, short_hash};

/// Errors from synthesis builders.
#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("empty field: {0}")]
    EmptyField(&'static str),
    /// Source answers may not carry reasoning tags — the builder owns the
    /// think channel and a collision would corrupt the serialized turn.
    #[error("answer contains a reasoning tag; refusing to nest think channels")]
    ThinkTagCollision,
    #[error("need at least 2 distractors, got {got}")]
    TooFewDistractors { got: usize },
    #[error("distractor {index} equals the correct option after normalization")]
    DistractorEqualsCorrect { index: usize },
    #[error("clause citation must be non-empty")]
    EmptyCitation,
    #[error("SOP trace is missing phase {phase}")]
    MissingPhase { phase: String },
    #[error("SOP trace does not match schema: expected [{expected}], found [{found}]")]
    SchemaMismatch { expected: String, found: String },
    #[error("cannot read lexicon {path}: {reason}")]
    LexiconIo { path: String, reason: String },
}

/// A question/answer pair extracted from a source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeQA {
    pub question: String,
    pub answer: String,
    /// Origin label (document id or corpus name), recorded in provenance.
    pub source: String,
}

impl KnowledgeQA {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.question.trim().is_empty() {
            return Err(SynthesisError::EmptyField("question"));
        }
        if self.answer.trim().is_empty() {
            return Err(SynthesisError::EmptyField("answer"));
        }
        if self.source.trim().is_empty() {
            return Err(SynthesisError::EmptyField("source"));
        }
        Ok(())
    }
}

/// Formats a QA pair as a knowledge-injection training sample: rote recall
/// with a deliberately empty reasoning channel (`<think></think>`), which
/// teaches the format without inventing reasoning for memorized facts.
pub fn format_knowledge_injection(qa: &KnowledgeQA) -> Result<Sample, SynthesisError> {
    qa.validate()?;
    if qa.answer.contains("<think>") || qa.answer.contains("</think>") {
        return Err(SynthesisError::ThinkTagCollision);
    }
    let id = format!("ki-{}", short_hash(&[&qa.question, &qa.source]));
    Ok(Sample {
        id,
        task_type: "knowledge_qa".to_string(),
        business_area: BusinessArea::IDK,
        format: SampleFormat::OpenEnded,
        difficulty: Difficulty::Simple,
        messages: vec![
            Message::user(qa.question.clone()),
            Message::assistant(assistant_content(None, &qa.answer)),
        ],
        think: None,
        answer: qa.answer.clone(),
        context: None,
        bucket: Bucket::Unassigned,
        provenance: Provenance {
            source: qa.source.clone(),
            pipeline: Pipeline::KnowledgeInjection,
            iteration: 0,
            validator_verdict: None,
        },
    })
}

/// How a distractor was derived from the correct option. Keeping the
/// perturbation type on the data makes option quality auditable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// A number was altered (amount, percentage, duration).
    NumericTamper,
    /// A term was swapped for a near-miss concept.
    SemanticSwap,
    /// The clause's applicability scope was shifted.
    ScopeShift,
}

/// Correct option plus perturbed distractors, grounded in a clause citation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorSpec {
    pub correct_option: String,
    pub distractors: Vec<(String, Perturbation)>,
    /// The clause the correct option is grounded in; cited inside the
    /// reasoning so every sample is traceable to policy text.
    pub clause_citation: String,
}

impl DistractorSpec {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.correct_option.trim().is_empty() {
            return Err(SynthesisError::EmptyField("correct_option"));
        }
        if self.distractors.len() < 2 {
            return Err(SynthesisError::TooFewDistractors { got: self.distractors.len() });
        }
        let correct = crate::text::normalize(&self.correct_option);
        for (i, (text, _)) in self.distractors.iter().enumerate() {
            if text.trim().is_empty() {
                return Err(SynthesisError::EmptyField("distractor"));
            }
            if crate::text::normalize(text) == correct {
                return Err(SynthesisError::DistractorEqualsCorrect { index: i });
            }
        }
        if self.clause_citation.trim().is_empty() {
            return Err(SynthesisError::EmptyCitation);
        }
        Ok(())
    }
}

/// The two supported SOP phase schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SopSchema {
    /// Entity → attribute → compliance, used by cognitive-alignment MCQ.
    Alignment3,
    /// Info extraction → risk id → rule detection → conclusion, used by
    /// underwriting/claims CoT.
    Underwriting4,
}

impl SopSchema {
    pub fn phase_names(&self) -> &'static [&'static str] {
        match self {
            SopSchema::Alignment3 => &["entity", "attribute", "compliance"],
            SopSchema::Underwriting4 => &["info_extraction", "risk_id", "rule_detection", "conclusion"],
        }
    }

    fn display_name(phase: &str) -> &'static str {
        match phase {
            "entity" => "Entity",
            "attribute" => "Attribute",
            "compliance" => "Compliance",
            "info_extraction" => "Info Extraction",
            "risk_id" => "Risk ID",
            "rule_detection" => "Rule Detection",
            "conclusion" => "Conclusion",
            _ => "Phase",
        }
    }

    fn label(&self) -> &'static str {
        match self {
            SopSchema::Alignment3 => "alignment3",
            SopSchema::Underwriting4 => "underwriting4",
        }
    }
}

/// An ordered SOP reasoning trace: (phase name, phase content) pairs. Plain
/// data — builders validate it against the schema they require.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SopTrace {
    pub schema: SopSchema,
    pub phases: Vec<(String, String)>,
}

impl SopTrace {
    /// Convenience constructor pairing contents with a schema's phase names
    /// in order.
    pub fn new(schema: SopSchema, contents: &[&str]) -> SopTrace {
        let phases = schema
            .phase_names()
            .iter()
            .zip(contents)
            .map(|(n, c)| (n.to_string(), c.to_string()))
            .collect();
        SopTrace { schema, phases }
    }

    /// Checks the trace against `expected`: right schema tag, exactly the
    /// schema's phases in order, all contents non-empty.
    pub fn validate(&self, expected: SopSchema) -> Result<(), SynthesisError> {
        if self.schema != expected {
            return Err(SynthesisError::SchemaMismatch {
                expected: expected.label().to_string(),
                found: self.schema.label().to_string(),
            });
        }
        let want = expected.phase_names();
        let got: Vec<&str> = self.phases.iter().map(|(n, _)| n.as_str()).collect();
        if got != want {
            // Distinguish "missing a phase" from "same phases, wrong shape".
            for w in want {
                if !got.contains(w) {
                    return Err(SynthesisError::MissingPhase { phase: w.to_string() });
                }
            }
            return Err(SynthesisError::SchemaMismatch {
                expected: want.join(", "),
                found: got.join(", "),
            });
        }
        for (name, content) in &self.phases {
            if content.trim().is_empty() {
                return Err(SynthesisError::MissingPhase { phase: name.clone() });
            }
        }
        Ok(())
    }

    /// Serializes the trace as the reasoning text: one `## Display Name`
    /// section per phase, separated by blank lines. This rendering is a
    /// stable contract — downstream linting and tests rely on it bit-exactly.
    pub fn think_text(&self) -> String {
        self.phases
            .iter()
            .map(|(name, content)| format!("## {}\n{}", SopSchema::display_name(name), content))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Builds a multiple-choice compliance sample from a question stem, a
/// perturbation spec, and a three-phase SOP trace.
///
/// Option order is shuffled deterministically from `(dataset_seed, sample
/// id)`, the answer letter tracks wherever the correct option lands, and the
/// reasoning ends with the clause citation.
pub fn build_alignment_sample(
    stem: &str,
    spec: &DistractorSpec,
    sop: &SopTrace,
    dataset_seed: u64,
) -> Result<Sample, SynthesisError> {
    if stem.trim().is_empty() {
        return Err(SynthesisError::EmptyField("stem"));
    }
    spec.validate()?;
    sop.validate(SopSchema::Alignment3)?;

    let id = format!("align-{}", short_hash(&[stem]));
    let mut options: Vec<&str> = Vec::with_capacity(1 + spec.distractors.len());
    options.push(spec.correct_option.as_str());
    options.extend(spec.distractors.iter().map(|(t, _)| t.as_str()));
    let mut rng = derive_rng(dataset_seed, &id);
    use rand::seq::SliceRandom;
    options.shuffle(&mut rng);

    let correct_idx = options
        .iter()
        .position(|o| *o == spec.correct_option)
        .expect("correct option survives the shuffle");
    let answer = char::from(b'A' + correct_idx as u8).to_string();

    let option_lines: Vec<String> = options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {}", char::from(b'A' + i as u8), o))
        .collect();
    let user = format!("{stem}\n\n{}", option_lines.join("\n"));
    let think = format!("{}\n\nClause: {}", sop.think_text(), spec.clause_citation);

    Ok(Sample {
        id,
        task_type: "clause_alignment_mcq".to_string(),
        business_area: BusinessArea::IUC,
        format: SampleFormat::MultipleChoice,
        difficulty: Difficulty::Simple,
        messages: vec![Message::user(user), Message::assistant(assistant_content(Some(&think), &answer))],
        think: Some(think),
        answer,
        context: None,
        bucket: Bucket::Unassigned,
        provenance: Provenance {
            source: spec.clause_citation.clone(),
            pipeline: Pipeline::CognitiveAlignment,
            iteration: 0,
            validator_verdict: None,
        },
    })
}

/// Builds an underwriting/claims case sample whose reasoning is a four-phase
/// SOP trace and whose answer is the case verdict.
pub fn build_sop_cot_sample(
    case_facts: &str,
    sop: &SopTrace,
    verdict: &str,
) -> Result<Sample, SynthesisError> {
    if case_facts.trim().is_empty() {
        return Err(SynthesisError::EmptyField("case_facts"));
    }
    if verdict.trim().is_empty() {
        return Err(SynthesisError::EmptyField("verdict"));
    }
    sop.validate(SopSchema::Underwriting4)?;

    let id = format!("sop-{}", short_hash(&[case_facts]));
    let think = sop.think_text();
    Ok(Sample {
        id,
        task_type: "underwriting_sop".to_string(),
        business_area: BusinessArea::ILR,
        format: SampleFormat::OpenEnded,
        difficulty: Difficulty::Complex,
        messages: vec![
            Message::user(case_facts.to_string()),
            Message::assistant(assistant_content(Some(&think), verdict)),
        ],
        think: Some(think),
        answer: verdict.to_string(),
        context: None,
        bucket: Bucket::Unassigned,
        provenance: Provenance {
            source: "underwriting_sop".to_string(),
            pipeline: Pipeline::UnderwritingClaims,
            iteration: 0,
            validator_verdict: None,
        },
    })
}

/// Lexicon of backtracking phrases. Each phrase is matched case-insensitively
/// on word boundaries, so "await" does not trigger "wait".
#[derive(Debug)]
pub struct BacktrackLexicon {
    patterns: Vec<(String, Regex)>,
}

impl BacktrackLexicon {
    fn from_lines(lines: &str) -> BacktrackLexicon {
        let mut patterns = Vec::new();
        for line in lines.lines() {
            let phrase = line.trim();
            if phrase.is_empty() || phrase.starts_with('#') {
                continue;
            }
            let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(phrase)))
                .expect("escaped phrase compiles");
            patterns.push((phrase.to_string(), re));
        }
        BacktrackLexicon { patterns }
    }

    /// The embedded default lexicon.
    pub fn builtin() -> &'static BacktrackLexicon {
        static LEX: OnceLock<BacktrackLexicon> = OnceLock::new();
        LEX.get_or_init(|| BacktrackLexicon::from_lines(include_str!("../assets/backtrack_lexicon.txt")))
    }

    /// Loads a lexicon file: one phrase per line, `#` comments allowed.
    pub fn from_file(path: &std::path::Path) -> Result<BacktrackLexicon, SynthesisError> {
        let raw = std::fs::read_to_string(path).map_err(|e| SynthesisError::LexiconIo {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(BacktrackLexicon::from_lines(&raw))
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(|(p, _)| p.as_str())
    }

    /// Distinct lexicon phrases present in `text`, in lexicon order.
    pub fn hits<'a>(&'a self, text: &str) -> Vec<&'a str> {
        self.patterns
            .iter()
            .filter(|(_, re)| re.is_match(text))
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

/// Result of the standardized-CoT lint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotCheck {
    /// True iff the reasoning is clean: numbered steps 1..n, no
    /// backtracking, no empty steps.
    pub linear: bool,
    /// Human-readable violations; empty iff `linear`.
    pub violations: Vec<String>,
    /// Number of steps recognized.
    pub steps: usize,
}

fn step_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // The trailing whitespace requirement is checked manually (not consumed
    // by the pattern) so adjacent markers like "1. 2." both match.
    RE.get_or_init(|| Regex::new(r"(?m)(?:^|\s)(\d+)\.").expect("step marker pattern compiles"))
}

/// Lints a chain of thought against the standardized linear format:
/// inline-numbered steps `1. … 2. … n. …`, contiguous from 1, each step
/// non-empty, and no backtracking phrases from the lexicon anywhere.
///
/// Step markers are digit-dot-space sequences at a line start or after
/// whitespace. Text containing stray such sequences is conservatively
/// reported as non-contiguous rather than silently accepted.
pub fn check_standardized_cot(cot: &str, lexicon: &BacktrackLexicon) -> CotCheck {
    if cot.trim().is_empty() {
        return CotCheck { linear: false, violations: vec!["empty".to_string()], steps: 0 };
    }
    let mut violations = Vec::new();
    for phrase in lexicon.hits(cot) {
        violations.push(format!("backtracking: {phrase}"));
    }

    let mut markers: Vec<(usize, usize, usize)> = Vec::new(); // (number, start, end)
    for caps in step_marker_re().captures_iter(cot) {
        let whole = caps.get(0).expect("match exists");
        // A marker must be followed by whitespace or end of text; this keeps
        // decimals like "105.25" from reading as step markers.
        let followed_ok = cot[whole.end()..].chars().next().is_none_or(char::is_whitespace);
        if !followed_ok {
            continue;
        }
        if let Ok(n) = caps[1].parse::<usize>() {
            markers.push((n, whole.start(), whole.end()));
        }
    }
    let steps;
    if markers.is_empty() {
        violations.push("no numbered steps".to_string());
        steps = 0;
    } else if markers.iter().map(|(n, _, _)| *n).ne(1..=markers.len()) {
        violations.push("step numbering not contiguous from 1".to_string());
        steps = 0;
    } else {
        steps = markers.len();
        for i in 0..markers.len() {
            let content_start = markers[i].2;
            let content_end = if i + 1 < markers.len() { markers[i + 1].1 } else { cot.len() };
            if cot[content_start..content_end].trim().is_empty() {
                violations.push(format!("empty step {}", i + 1));
            }
        }
    }
    CotCheck { linear: violations.is_empty(), violations, steps }
}

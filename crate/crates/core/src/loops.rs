//! Self-correction loops.
//!
//! The answer loop drives generate → verify → reflect → rewrite cycles over a
//! sample until a candidate passes verification or the iteration budget runs
//! out; the prompt loop refines a task prompt against a validation set using
//! the current best prompt's error digest. Both loops are fully replayable:
//! under a scripted mock the same inputs walk the same state sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{assistant_content, Message, Role, Sample};
use crate::gateway::{GatewayError, ModelGateway};
use crate::rewards::{verify_rule_based, PatternLibrary, Verdict};
use crate::text::normalize;

/// Errors from loop execution.
#[derive(Debug, Error)]
pub enum LoopError {
    #[error("gateway failure during {phase:?} for {subject}: {source}")]
    Gateway {
        subject: String,
        phase: LoopPhase,
        #[source]
        source: GatewayError,
    },
    #[error("max_iters must be at least 1")]
    ZeroIterations,
    #[error("sample {0} does not expose an open prompt (no user turn to answer)")]
    NotAPrompt(String),
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("initial prompt is empty")]
    EmptyPrompt,
}

/// Phase of the answer loop a state snapshot was taken after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopPhase {
    Generate,
    Verify,
    Reflect,
    Rewrite,
    Accepted,
    Rejected,
}

/// One verification verdict in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    /// 0-based verification iteration.
    pub iteration: u32,
    pub pass: bool,
    pub reason: String,
}

/// Snapshot of the loop after a phase transition. Snapshots accumulate:
/// later states carry the full verdict and reflection history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerLoopState {
    pub sample_id: String,
    /// 0-based iteration the snapshot belongs to.
    pub iteration: u32,
    pub phase: LoopPhase,
    /// Raw candidate response (reasoning tags included).
    pub candidate: String,
    pub verdicts: Vec<VerdictRecord>,
    pub reflections: Vec<String>,
}

/// Ordered state snapshots, one per phase transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AnswerLoopTrace {
    pub states: Vec<AnswerLoopState>,
}

impl AnswerLoopTrace {
    pub fn sample_id(&self) -> Option<&str> {
        self.states.first().map(|s| s.sample_id.as_str())
    }

    /// Number of verification phases that ran.
    pub fn verify_count(&self) -> usize {
        self.states.last().map_or(0, |s| s.verdicts.len())
    }

    /// Writes the trace as JSONL, one state snapshot per line.
    pub fn append_jsonl(&self, out: &mut Vec<u8>) {
        for state in &self.states {
            serde_json::to_writer(&mut *out, state).expect("state serializes");
            out.push(b'\n');
        }
    }
}

/// Outcome of one answer loop.
#[derive(Debug, Clone, PartialEq)]
pub enum LoopOutcome {
    /// A candidate passed verification; the corrected sample carries the new
    /// assistant turn and records the accepting iteration in provenance.
    Accepted { sample: Box<Sample>, trace: AnswerLoopTrace },
    /// The iteration budget ran out; the caller quarantines the sample.
    Rejected { trace: AnswerLoopTrace },
}

impl LoopOutcome {
    pub fn trace(&self) -> &AnswerLoopTrace {
        match self {
            LoopOutcome::Accepted { trace, .. } | LoopOutcome::Rejected { trace } => trace,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, LoopOutcome::Accepted { .. })
    }
}

/// Verdict returned by an [`AnswerVerifier`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierVerdict {
    pub pass: bool,
    pub reason: String,
}

/// Pluggable candidate checker. `candidate_answer` is the parsed final
/// answer (reasoning stripped); the full sample is available for gold
/// answers, context, or format-specific checks.
pub trait AnswerVerifier: Send + Sync {
    fn verify(&self, candidate_answer: &str, sample: &Sample) -> VerifierVerdict;
}

/// Rule-based verifier: the candidate must match the sample's gold answer
/// under the deterministic verification cascade.
#[derive(Debug, Clone, Copy)]
pub struct RuleVerifier {
    pub numeric_tol: f64,
}

impl RuleVerifier {
    pub fn new(numeric_tol: f64) -> RuleVerifier {
        RuleVerifier { numeric_tol }
    }
}

impl AnswerVerifier for RuleVerifier {
    fn verify(&self, candidate_answer: &str, sample: &Sample) -> VerifierVerdict {
        if sample.answer.is_empty() {
            return VerifierVerdict {
                pass: false,
                reason: "sample has no gold answer to verify against".to_string(),
            };
        }
        let outcome =
            verify_rule_based(candidate_answer, &sample.answer, PatternLibrary::builtin(), self.numeric_tol);
        match outcome.verdict {
            Verdict::Correct => VerifierVerdict {
                pass: true,
                reason: format!("matched gold answer ({:?})", outcome.match_kind),
            },
            _ => VerifierVerdict {
                pass: false,
                reason: format!("expected `{}`, candidate does not match", sample.answer),
            },
        }
    }
}

/// Splits a raw model response into (reasoning, final answer). A leading
/// `<think>…</think>` block becomes the reasoning; everything after it is
/// the answer. Responses without tags are all answer.
pub fn parse_think_answer(content: &str) -> (Option<String>, String) {
    let trimmed = content.trim_start();
    if let Some(rest) = trimmed.strip_prefix("<think>") {
        if let Some(end) = rest.find("</think>") {
            let think = rest[..end].trim();
            let answer = rest[end + "</think>".len()..].trim();
            let think = if think.is_empty() { None } else { Some(think.to_string()) };
            return (think, answer.to_string());
        }
    }
    (None, content.trim().to_string())
}

const GEN_SYSTEM: &str = "You are an insurance domain expert. Reason inside <think> tags, \
then state the final answer after the closing tag.";

const REFLECT_SYSTEM: &str = "You review failed answers to insurance tasks. Diagnose concretely \
what went wrong in the candidate response. Reply with the diagnosis only.";

const REWRITE_SYSTEM: &str = "You rewrite failed answers to insurance tasks. Produce a corrected \
response: reason inside <think> tags, then state the final answer after the closing tag.";

fn prompt_messages(sample: &Sample) -> Result<Vec<Message>, LoopError> {
    let mut msgs = sample.messages.clone();
    while msgs.last().is_some_and(|m| m.role == Role::Assistant) {
        msgs.pop();
    }
    if msgs.last().is_none_or(|m| m.role != Role::User) {
        return Err(LoopError::NotAPrompt(sample.id.clone()));
    }
    Ok(msgs)
}

fn render_task(msgs: &[Message]) -> String {
    msgs.iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            format!("{role}: {}", m.content)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Messages for the generation phase; public so runs can be scripted.
pub fn generation_messages(sample: &Sample) -> Result<Vec<Message>, LoopError> {
    let mut msgs = vec![Message::system(GEN_SYSTEM)];
    msgs.extend(prompt_messages(sample)?);
    Ok(msgs)
}

/// Messages for the reflection phase.
pub fn reflection_messages(sample: &Sample, candidate: &str, reason: &str) -> Result<Vec<Message>, LoopError> {
    let task = render_task(&prompt_messages(sample)?);
    Ok(vec![
        Message::system(REFLECT_SYSTEM),
        Message::user(format!(
            "Task:\n{task}\n\nCandidate response:\n{candidate}\n\nVerifier feedback: {reason}\n\n\
             Diagnose in two or three sentences what went wrong."
        )),
    ])
}

/// Messages for the rewrite phase.
pub fn rewrite_messages(sample: &Sample, candidate: &str, reflection: &str) -> Result<Vec<Message>, LoopError> {
    let task = render_task(&prompt_messages(sample)?);
    Ok(vec![
        Message::system(REWRITE_SYSTEM),
        Message::user(format!(
            "Task:\n{task}\n\nPrevious response:\n{candidate}\n\nDiagnosis:\n{reflection}\n\n\
             Write the corrected response."
        )),
    ])
}

/// Runs the answer self-correction loop on one sample.
///
/// At most `max_iters` verification phases execute. A passing candidate
/// yields `Accepted` with the corrected sample (new assistant turn, parsed
/// reasoning/answer, `provenance.iteration` set to the accepting iteration);
/// running out of budget yields `Rejected`. Gateway failures abort with the
/// phase recorded.
pub fn run_answer_loop(
    gateway: &ModelGateway,
    sample: &Sample,
    verifier: &dyn AnswerVerifier,
    max_iters: u32,
) -> Result<LoopOutcome, LoopError> {
    if max_iters == 0 {
        return Err(LoopError::ZeroIterations);
    }
    let prompt = prompt_messages(sample)?;

    let mut trace = AnswerLoopTrace::default();
    let mut state = AnswerLoopState {
        sample_id: sample.id.clone(),
        iteration: 0,
        phase: LoopPhase::Generate,
        candidate: String::new(),
        verdicts: Vec::new(),
        reflections: Vec::new(),
    };
    let call = |messages: Vec<Message>, phase: LoopPhase| -> Result<String, LoopError> {
        let req = gateway.generation_request(messages);
        gateway
            .complete(&req)
            .map(|r| r.content)
            .map_err(|source| LoopError::Gateway { subject: sample.id.clone(), phase, source })
    };

    state.candidate = call(generation_messages(sample)?, LoopPhase::Generate)?;
    trace.states.push(state.clone());

    loop {
        let (think, answer) = parse_think_answer(&state.candidate);
        let verdict = verifier.verify(&answer, sample);
        state.phase = LoopPhase::Verify;
        state.verdicts.push(VerdictRecord {
            iteration: state.iteration,
            pass: verdict.pass,
            reason: verdict.reason.clone(),
        });
        trace.states.push(state.clone());

        if verdict.pass {
            state.phase = LoopPhase::Accepted;
            trace.states.push(state.clone());
            let mut accepted = sample.clone();
            accepted.messages = prompt;
            accepted.messages.push(Message::assistant(assistant_content(think.as_deref(), &answer)));
            accepted.think = think;
            accepted.answer = answer;
            accepted.provenance.iteration = state.iteration;
            return Ok(LoopOutcome::Accepted { sample: Box::new(accepted), trace });
        }
        if state.iteration + 1 >= max_iters {
            state.phase = LoopPhase::Rejected;
            trace.states.push(state.clone());
            return Ok(LoopOutcome::Rejected { trace });
        }

        let reflection = call(
            reflection_messages(sample, &state.candidate, &verdict.reason)?,
            LoopPhase::Reflect,
        )?;
        state.phase = LoopPhase::Reflect;
        state.reflections.push(reflection.clone());
        trace.states.push(state.clone());

        let rewritten = call(
            rewrite_messages(sample, &state.candidate, &reflection)?,
            LoopPhase::Rewrite,
        )?;
        state.iteration += 1;
        state.phase = LoopPhase::Rewrite;
        state.candidate = rewritten;
        trace.states.push(state.clone());
    }
}

/// Runs answer loops over a batch in parallel (bounded by the gateway's
/// in-flight cap); results keep input order.
pub fn run_answer_loops(
    gateway: &ModelGateway,
    samples: &[Sample],
    verifier: &dyn AnswerVerifier,
    max_iters: u32,
) -> Vec<Result<LoopOutcome, LoopError>> {
    samples
        .par_iter()
        .map(|s| run_answer_loop(gateway, s, verifier, max_iters))
        .collect()
}

/// Yield statistics over a batch of loop results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldSummary {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Loops that aborted on gateway failure.
    pub errored: usize,
    /// `accepted / total`; 0 when the batch is empty.
    pub yield_rate: f64,
    pub accepted_ids: Vec<String>,
    pub rejected_ids: Vec<String>,
}

/// Computes batch yield: accepted / total, with an empty batch yielding 0.
pub fn batch_yield(results: &[Result<LoopOutcome, LoopError>]) -> YieldSummary {
    let mut summary = YieldSummary {
        total: results.len(),
        accepted: 0,
        rejected: 0,
        errored: 0,
        yield_rate: 0.0,
        accepted_ids: Vec::new(),
        rejected_ids: Vec::new(),
    };
    for r in results {
        match r {
            Ok(LoopOutcome::Accepted { sample, .. }) => {
                summary.accepted += 1;
                summary.accepted_ids.push(sample.id.clone());
            }
            Ok(LoopOutcome::Rejected { trace }) => {
                summary.rejected += 1;
                if let Some(id) = trace.sample_id() {
                    summary.rejected_ids.push(id.to_string());
                }
            }
            Err(_) => summary.errored += 1,
        }
    }
    if summary.total > 0 {
        summary.yield_rate = summary.accepted as f64 / summary.total as f64;
    }
    summary
}

// ---------------------------------------------------------------------------
// Prompt refinement loop
// ---------------------------------------------------------------------------

/// One validation case for the prompt loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationCase {
    pub id: String,
    pub input: String,
    pub gold: String,
}

/// One failed case in the error digest handed to the refiner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDigestEntry {
    pub case_id: String,
    pub summary: String,
}

/// The best prompt seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPrompt {
    pub prompt: String,
    pub accuracy: f64,
    /// Round the prompt was evaluated in (0 = the initial prompt).
    pub round: u32,
}

/// Final state of a prompt refinement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLoopState {
    /// Last completed round.
    pub round: u32,
    /// Prompt evaluated most recently.
    pub current_prompt: String,
    /// Validation accuracy per round, starting with the initial prompt.
    pub accuracy_trace: Vec<f64>,
    pub best: BestPrompt,
    /// Error digest of the best prompt (empty when it scored 100%).
    pub error_digest: Vec<ErrorDigestEntry>,
    /// Set when a gateway failure cut the run short; the state still carries
    /// the best prompt found before the failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway_error: Option<String>,
}

/// Decides whether a model output solves a validation case.
pub trait PromptScorer: Send + Sync {
    fn score(&self, input: &str, gold: &str, output: &str) -> bool;
}

/// Normalized exact-match scorer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchScorer;

impl PromptScorer for ExactMatchScorer {
    fn score(&self, _input: &str, gold: &str, output: &str) -> bool {
        normalize(output) == normalize(gold)
    }
}

const REFINE_SYSTEM: &str = "You are a prompt engineer for insurance NLP tasks. Given the current \
prompt and the validation cases it fails, rewrite the prompt to fix those failures without \
breaking passing cases. Reply with the new prompt only.";

/// Messages used to evaluate `prompt` on one validation input.
pub fn prompt_eval_messages(prompt: &str, input: &str) -> Vec<Message> {
    vec![Message::system(prompt), Message::user(input)]
}

/// Messages asking the refiner for an improved prompt, given the best prompt
/// and its error digest. The round number is part of the request so that
/// successive attempts from the same base prompt are distinct requests (a
/// transcript can script each round independently).
pub fn refine_messages(round: u32, best_prompt: &str, digest: &[ErrorDigestEntry]) -> Vec<Message> {
    let failures = if digest.is_empty() {
        "- (none)".to_string()
    } else {
        digest
            .iter()
            .map(|e| format!("- case {}: {}", e.case_id, e.summary))
            .collect::<Vec<_>>()
            .join("\n")
    };
    vec![
        Message::system(REFINE_SYSTEM),
        Message::user(format!(
            "Refinement round {round}.\n\nCurrent prompt:\n{best_prompt}\n\n\
             Validation failures:\n{failures}\n\nRewrite the prompt."
        )),
    ]
}

fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let cut: String = s.chars().take(max).collect();
        format!("{cut}…")
    }
}

fn evaluate_prompt(
    gateway: &ModelGateway,
    prompt: &str,
    validation: &[ValidationCase],
    scorer: &dyn PromptScorer,
) -> Result<(f64, Vec<ErrorDigestEntry>), GatewayError> {
    let mut passed = 0usize;
    let mut digest = Vec::new();
    for case in validation {
        let req = gateway.generation_request(prompt_eval_messages(prompt, &case.input));
        let output = gateway.complete(&req)?.content;
        if scorer.score(&case.input, &case.gold, &output) {
            passed += 1;
        } else {
            digest.push(ErrorDigestEntry {
                case_id: case.id.clone(),
                summary: format!("expected `{}`, got `{}`", case.gold, truncate_chars(&output, 60)),
            });
        }
    }
    Ok((passed as f64 / validation.len() as f64, digest))
}

/// Runs the prompt refinement loop: evaluates the initial prompt (round 0),
/// then up to `max_rounds` refinements, each derived from the best prompt so
/// far and its error digest.
///
/// Improvement is strict: ties keep the earlier prompt. A perfect prompt
/// stops early (nothing to refine). Gateway failures return the best-so-far
/// state with `gateway_error` set instead of erroring.
pub fn run_prompt_loop(
    gateway: &ModelGateway,
    initial_prompt: &str,
    validation: &[ValidationCase],
    scorer: &dyn PromptScorer,
    max_rounds: u32,
) -> Result<PromptLoopState, LoopError> {
    if initial_prompt.trim().is_empty() {
        return Err(LoopError::EmptyPrompt);
    }
    if validation.is_empty() {
        return Err(LoopError::EmptyValidation);
    }

    let mut state = PromptLoopState {
        round: 0,
        current_prompt: initial_prompt.to_string(),
        accuracy_trace: Vec::new(),
        best: BestPrompt { prompt: initial_prompt.to_string(), accuracy: 0.0, round: 0 },
        error_digest: Vec::new(),
        gateway_error: None,
    };

    match evaluate_prompt(gateway, initial_prompt, validation, scorer) {
        Ok((acc, digest)) => {
            state.accuracy_trace.push(acc);
            state.best.accuracy = acc;
            state.error_digest = digest;
        }
        Err(e) => {
            state.gateway_error = Some(e.to_string());
            return Ok(state);
        }
    }

    for round in 1..=max_rounds {
        if state.best.accuracy >= 1.0 {
            break;
        }
        let req =
            gateway.generation_request(refine_messages(round, &state.best.prompt, &state.error_digest));
        let candidate = match gateway.complete(&req) {
            Ok(r) => r.content,
            Err(e) => {
                state.gateway_error = Some(e.to_string());
                return Ok(state);
            }
        };
        let (acc, digest) = match evaluate_prompt(gateway, &candidate, validation, scorer) {
            Ok(v) => v,
            Err(e) => {
                state.gateway_error = Some(e.to_string());
                return Ok(state);
            }
        };
        state.round = round;
        state.current_prompt = candidate.clone();
        state.accuracy_trace.push(acc);
        if acc > state.best.accuracy {
            state.best = BestPrompt { prompt: candidate, accuracy: acc, round };
            state.error_digest = digest;
        }
    }
    Ok(state)
}

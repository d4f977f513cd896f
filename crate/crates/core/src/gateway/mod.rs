//! The model gateway: the single entry point through which every pipeline
//! stage talks to a model.
//!
//! All remote behavior sits behind the [`ChatBackend`] trait so any pipeline
//! run can swap the HTTP backend for the scripted [`mock::MockBackend`] and
//! execute fully offline and deterministically. The gateway owns retry
//! policy, the in-flight concurrency cap, and the judge operations
//! (answer-equivalence and rubric grading) together with their prompt
//! templates.

mod http;
pub mod mock;
mod prompts;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::Message;
use crate::text;

pub use http::HttpBackend;
pub use prompts::PromptTemplates;

/// What kind of call a request is. Judge modes exist so instrumentation and
/// transcripts can distinguish grading traffic from generation traffic; the
/// wire format is identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    Generate,
    /// Single-pass judgement constrained to a one-token verdict.
    JudgeDirect,
    /// Judgement that reasons step by step before its verdict lines.
    JudgeCot,
}

/// One chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub mode: RequestMode,
}

impl ChatRequest {
    /// Serializes the wire body once. Retries re-send these exact bytes, so
    /// request bodies are byte-identical across attempts.
    fn wire_body(&self) -> Vec<u8> {
        let wire = WireRequest {
            model: &self.model,
            messages: &self.messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        serde_json::to_vec(&wire).expect("request serializes")
    }
}

/// OpenAI-style chat-completions body. `mode` is gateway bookkeeping and does
/// not go on the wire.
#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
pub(crate) struct WireRequestOwned {
    pub(crate) messages: Vec<Message>,
}

/// A successful completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub latency_ms: u64,
    /// 1-based number of attempts it took (1 = no retries needed).
    pub attempts: u32,
}

/// Connection settings for one endpoint. TOML config files mirror these
/// fields one-to-one; `ALIGNKIT_API_KEY` in the environment overrides the
/// file's `api_key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub api_key: String,
    pub timeout_ms: u64,
    /// Retries after the first attempt; total attempts = `max_retries + 1`.
    pub max_retries: u32,
    /// Hard cap on concurrent in-flight requests through this gateway.
    pub max_in_flight: usize,
    /// First backoff delay; doubles each retry, with jitter.
    pub backoff_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000".to_string(),
            api_key: String::new(),
            timeout_ms: 30_000,
            max_retries: 2,
            max_in_flight: 8,
            backoff_base_ms: 50,
        }
    }
}

/// Environment variable that overrides the configured API key.
pub const API_KEY_ENV: &str = "ALIGNKIT_API_KEY";

impl EndpointConfig {
    /// Loads a TOML config file and applies the `ALIGNKIT_API_KEY` override.
    pub fn from_file(path: &std::path::Path) -> Result<EndpointConfig, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: EndpointConfig = toml::from_str(&raw)
            .map_err(|e| GatewayError::InvalidConfig(format!("bad config {}: {e}", path.display())))?;
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            cfg.api_key = key;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(GatewayError::InvalidConfig("timeout_ms must be positive".into()));
        }
        Ok(())
    }
}

/// Model ids the gateway stamps on requests it builds itself (judges) and the
/// default for generation helpers. Ids are configuration, not contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelIds {
    pub generator: String,
    pub judge: String,
}

impl Default for ModelIds {
    fn default() -> Self {
        ModelIds { generator: "generator".to_string(), judge: "judge".to_string() }
    }
}

/// Gateway-level failures.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid gateway configuration: {0}")]
    InvalidConfig(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("remote error {status}: {message}")]
    Remote { status: u16, message: String },
    #[error("transport failure: {message}")]
    Transport { message: String },
    #[error("retries exhausted after {attempts} attempts; last failure: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("judge output unparseable; raw output preserved: {raw}")]
    JudgeParse { raw: String },
}

/// How a single backend call failed. The retry policy keys off this
/// classification: only timeouts, HTTP 429, and 5xx are retryable.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendFailure {
    #[error("timeout")]
    Timeout,
    #[error("status {code}: {message}")]
    Status { code: u16, message: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl BackendFailure {
    fn retryable(&self) -> bool {
        match self {
            BackendFailure::Timeout => true,
            BackendFailure::Status { code, .. } => *code == 429 || (500..600).contains(code),
            BackendFailure::Transport(_) | BackendFailure::Malformed(_) => false,
        }
    }
}

/// A chat backend executes one already-serialized request body and returns
/// the assistant content. Implementations must be safe to call from many
/// threads at once.
pub trait ChatBackend: Send + Sync {
    fn execute(&self, body: &[u8]) -> Result<String, BackendFailure>;
}

/// Counting gate implementing the in-flight cap without an async runtime.
struct Gate {
    active: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

struct GateGuard<'a>(&'a Gate);

impl Gate {
    fn new(cap: usize) -> Gate {
        Gate { active: Mutex::new(0), cv: Condvar::new(), cap }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.active.lock().expect("gate lock");
        while *n >= self.cap {
            n = self.cv.wait(n).expect("gate wait");
        }
        *n += 1;
        GateGuard(self)
    }
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().expect("gate lock");
        *n -= 1;
        self.0.cv.notify_one();
    }
}

/// Outcome of an answer-equivalence judgement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Equivalence {
    Equivalent,
    Different,
    /// The judge could not produce a usable verdict; `cause` says why
    /// (empty gold, gateway failure, or unparseable output).
    Unjudgeable { cause: String },
}

/// One graded dimension of a rubric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricDimension {
    pub name: String,
    pub description: String,
    pub min: f64,
    pub max: f64,
}

/// A grading rubric for CoT judgement. Scores come back normalized to [0,1]
/// via each dimension's (min, max) range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricSpec {
    pub dimensions: Vec<RubricDimension>,
}

impl RubricSpec {
    /// The default grading rubric for open-ended responses: factuality,
    /// professionalism, and expression, each on a [0,1] scale.
    pub fn default_quality() -> RubricSpec {
        let dim = |name: &str, description: &str| RubricDimension {
            name: name.to_string(),
            description: description.to_string(),
            min: 0.0,
            max: 1.0,
        };
        RubricSpec {
            dimensions: vec![
                dim("factuality", "claims are correct and supported by the evidence context"),
                dim("professionalism", "tone and terminology fit insurance practice"),
                dim("expression", "clear, well-organized, directly responsive"),
            ],
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.dimensions.is_empty() {
            return Err(GatewayError::InvalidRequest("rubric must have at least one dimension".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &self.dimensions {
            if d.name.is_empty() {
                return Err(GatewayError::InvalidRequest("rubric dimension name is empty".into()));
            }
            if !seen.insert(d.name.as_str()) {
                return Err(GatewayError::InvalidRequest(format!(
                    "duplicate rubric dimension {}",
                    d.name
                )));
            }
            if d.max.is_nan() || d.min.is_nan() || d.max <= d.min {
                return Err(GatewayError::InvalidRequest(format!(
                    "rubric dimension {} has degenerate range {}..{}",
                    d.name, d.min, d.max
                )));
            }
        }
        Ok(())
    }
}

/// Stable hash of a request's messages. Mock transcripts are keyed by this
/// value, and evaluation ledgers record it for judge calls.
pub fn request_hash(messages: &[Message]) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(messages.len() * 2);
    for m in messages {
        parts.push(match m.role {
            crate::datamodel::Role::System => "system",
            crate::datamodel::Role::User => "user",
            crate::datamodel::Role::Assistant => "assistant",
        });
        parts.push(&m.content);
    }
    text::content_hash(&parts)
}

fn truncate_for_log(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let cut: String = s.chars().take(max).collect();
        format!("{cut}…")
    }
}

/// The gateway itself. Construct once, share by reference; all methods take
/// `&self` and are thread-safe.
pub struct ModelGateway {
    cfg: EndpointConfig,
    models: ModelIds,
    templates: PromptTemplates,
    backend: Arc<dyn ChatBackend>,
    gate: Gate,
}

impl ModelGateway {
    pub fn new(cfg: EndpointConfig, backend: Arc<dyn ChatBackend>) -> Result<ModelGateway, GatewayError> {
        cfg.validate()?;
        let gate = Gate::new(cfg.max_in_flight);
        Ok(ModelGateway { cfg, models: ModelIds::default(), templates: PromptTemplates::default(), backend, gate })
    }

    /// Convenience constructor wiring up the HTTP backend from `cfg`.
    pub fn over_http(cfg: EndpointConfig) -> Result<ModelGateway, GatewayError> {
        let backend = Arc::new(HttpBackend::new(&cfg)?);
        ModelGateway::new(cfg, backend)
    }

    pub fn with_models(mut self, models: ModelIds) -> ModelGateway {
        self.models = models;
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> ModelGateway {
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn models(&self) -> &ModelIds {
        &self.models
    }

    /// Builds a generation request with the gateway's generator model and
    /// standard sampling settings.
    pub fn generation_request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            model: self.models.generator.clone(),
            messages,
            temperature: 0.7,
            max_tokens: 2048,
            mode: RequestMode::Generate,
        }
    }

    /// Executes one request with retry and the in-flight cap.
    ///
    /// Retries apply only to timeouts, HTTP 429, and 5xx, with exponential
    /// backoff (`backoff_base_ms * 2^(attempt-1)` plus jitter). At most
    /// `max_retries + 1` attempts are made; when the final allowed attempt
    /// fails retryably the error is [`GatewayError::Exhausted`] (or the bare
    /// failure when `max_retries` is 0, since no retry policy was in play).
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if req.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if req.model.is_empty() {
            return Err(GatewayError::InvalidRequest("model id must be non-empty".into()));
        }
        let body = req.wire_body();
        let _permit = self.gate.acquire();
        let start = Instant::now();
        let max_attempts = self.cfg.max_retries + 1;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.backend.execute(&body) {
                Ok(content) => {
                    return Ok(ChatResponse {
                        content,
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempts: attempt,
                    });
                }
                Err(failure) => {
                    if failure.retryable() && attempt < max_attempts {
                        self.backoff(attempt);
                        continue;
                    }
                    return Err(Self::map_failure(failure, attempt, self.cfg.max_retries));
                }
            }
        }
    }

    fn map_failure(failure: BackendFailure, attempts: u32, max_retries: u32) -> GatewayError {
        if failure.retryable() && max_retries > 0 {
            return GatewayError::Exhausted { attempts, last: failure.to_string() };
        }
        match failure {
            BackendFailure::Timeout => GatewayError::Timeout { attempts },
            BackendFailure::Status { code, message } => GatewayError::Remote { status: code, message },
            BackendFailure::Transport(m) | BackendFailure::Malformed(m) => {
                GatewayError::Transport { message: m }
            }
        }
    }

    fn backoff(&self, attempt: u32) {
        let base = self.cfg.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        if base == 0 {
            return;
        }
        let jitter = rand::thread_rng().gen_range(0..=base / 2);
        let delay = (base + jitter).min(5_000);
        std::thread::sleep(std::time::Duration::from_millis(delay));
    }

    /// Messages for an equivalence judgement; exposed so tests and offline
    /// runs can script the mock transcript for exactly this request.
    pub fn equivalence_messages(&self, candidate: &str, gold: &str) -> Vec<Message> {
        self.templates.render_equivalence(candidate, gold)
    }

    /// Decides whether `candidate` and `gold` express the same answer.
    ///
    /// Normalized string equality short-circuits to `Equivalent` with zero
    /// remote calls. Otherwise a single direct-inference judge call is made
    /// and its last EQUIVALENT/DIFFERENT token is the verdict. Anything
    /// unusable (empty gold, gateway failure, garbage output) comes back as
    /// `Unjudgeable` with the cause preserved — never a panic.
    pub fn judge_equivalence(&self, candidate: &str, gold: &str) -> Equivalence {
        if gold.trim().is_empty() {
            return Equivalence::Unjudgeable { cause: "empty gold answer".to_string() };
        }
        if text::normalize(candidate) == text::normalize(gold) {
            return Equivalence::Equivalent;
        }
        let req = ChatRequest {
            model: self.models.judge.clone(),
            messages: self.equivalence_messages(candidate, gold),
            temperature: 0.0,
            max_tokens: 16,
            mode: RequestMode::JudgeDirect,
        };
        let content = match self.complete(&req) {
            Ok(resp) => resp.content,
            Err(e) => return Equivalence::Unjudgeable { cause: e.to_string() },
        };
        let mut verdict = None;
        for tok in text::tokenize(&content) {
            if tok.eq_ignore_ascii_case("EQUIVALENT") {
                verdict = Some(Equivalence::Equivalent);
            } else if tok.eq_ignore_ascii_case("DIFFERENT") {
                verdict = Some(Equivalence::Different);
            }
        }
        verdict.unwrap_or_else(|| Equivalence::Unjudgeable {
            cause: format!("unparseable judge verdict: {}", truncate_for_log(&content, 120)),
        })
    }

    /// Messages for a rubric judgement; exposed for mock scripting and for
    /// ledgers that record the judge request hash.
    pub fn rubric_messages(
        &self,
        transcript: &[Message],
        context: Option<&str>,
        rubric: &RubricSpec,
    ) -> Vec<Message> {
        self.templates.render_rubric(transcript, context, rubric)
    }

    /// Grades `transcript` against `rubric` with one CoT judge call.
    ///
    /// The judge must end with a `name=value` line per dimension; the last
    /// occurrence of each wins. A missing dimension fails the whole call with
    /// [`GatewayError::JudgeParse`], raw output preserved. Scores are
    /// normalized to [0,1] by each dimension's (min, max) and clamped.
    pub fn judge_rubric(
        &self,
        transcript: &[Message],
        context: Option<&str>,
        rubric: &RubricSpec,
    ) -> Result<BTreeMap<String, f64>, GatewayError> {
        rubric.validate()?;
        let req = ChatRequest {
            model: self.models.judge.clone(),
            messages: self.rubric_messages(transcript, context, rubric),
            temperature: 0.0,
            max_tokens: 1024,
            mode: RequestMode::JudgeCot,
        };
        let content = self.complete(&req)?.content;
        let mut out = BTreeMap::new();
        for dim in &rubric.dimensions {
            let pattern = format!(r"(?i){}\s*=\s*(-?\d+(?:\.\d+)?)", regex::escape(&dim.name));
            let re = Regex::new(&pattern).expect("dimension pattern compiles");
            let last = re.captures_iter(&content).last();
            let raw_value = match last {
                Some(cap) => cap[1].parse::<f64>().ok(),
                None => None,
            };
            let Some(v) = raw_value else {
                return Err(GatewayError::JudgeParse { raw: content });
            };
            let normalized = ((v - dim.min) / (dim.max - dim.min)).clamp(0.0, 1.0);
            out.insert(dim.name.clone(), normalized);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::mock::MockBackend;
    use super::*;

    fn test_cfg() -> EndpointConfig {
        EndpointConfig { backoff_base_ms: 0, ..EndpointConfig::default() }
    }

    fn gw(backend: Arc<MockBackend>) -> ModelGateway {
        ModelGateway::new(test_cfg(), backend).unwrap()
    }

    fn one_message_req(text: &str) -> ChatRequest {
        ChatRequest {
            model: "generator".to_string(),
            messages: vec![Message::user(text)],
            temperature: 0.0,
            max_tokens: 64,
            mode: RequestMode::Generate,
        }
    }

    #[test]
    fn scripted_response_roundtrips() {
        let backend = Arc::new(MockBackend::new());
        let req = one_message_req("hello");
        backend.script_messages(&req.messages, "world");
        let g = gw(backend.clone());
        let resp = g.complete(&req).unwrap();
        assert_eq!(resp.content, "world");
        assert_eq!(resp.attempts, 1);
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn transient_failures_are_retried_with_identical_bodies() {
        let backend = Arc::new(MockBackend::new());
        let req = one_message_req("flaky");
        backend.script_failing(&req.messages, "ok", 1);
        let g = gw(backend.clone());
        let resp = g.complete(&req).unwrap();
        assert_eq!(resp.content, "ok");
        assert_eq!(resp.attempts, 2);
        let bodies = backend.bodies();
        assert_eq!(bodies.len(), 2);
        assert_eq!(bodies[0], bodies[1], "retry bodies must be byte-identical");
    }

    #[test]
    fn always_failing_script_exhausts_retries() {
        let backend = Arc::new(MockBackend::new());
        let req = one_message_req("doomed");
        backend.script_failing(&req.messages, "never", mock::ALWAYS_FAIL);
        let g = gw(backend.clone());
        match g.complete(&req) {
            Err(GatewayError::Exhausted { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected Exhausted, got {other:?}"),
        }
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn missing_transcript_is_remote_404_and_not_retried() {
        let backend = Arc::new(MockBackend::new());
        let g = gw(backend.clone());
        match g.complete(&one_message_req("unscripted")) {
            Err(GatewayError::Remote { status, .. }) => assert_eq!(status, 404),
            other => panic!("expected Remote, got {other:?}"),
        }
        assert_eq!(backend.calls(), 1, "4xx must not be retried");
    }

    #[test]
    fn empty_messages_are_rejected_before_any_call() {
        let backend = Arc::new(MockBackend::new());
        let g = gw(backend.clone());
        let req = ChatRequest { messages: vec![], ..one_message_req("x") };
        assert!(matches!(g.complete(&req), Err(GatewayError::InvalidRequest(_))));
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn equivalence_short_circuits_without_remote_calls() {
        let backend = Arc::new(MockBackend::new());
        let g = gw(backend.clone());
        assert_eq!(g.judge_equivalence("  One Half ", "one   half"), Equivalence::Equivalent);
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn equivalence_consults_judge_when_strings_differ() {
        let backend = Arc::new(MockBackend::new());
        let g = gw(backend.clone());
        backend.script_messages(&g.equivalence_messages("one half", "0.5"), "EQUIVALENT");
        backend.script_messages(&g.equivalence_messages("two thirds", "0.5"), "The verdict is DIFFERENT");
        assert_eq!(g.judge_equivalence("one half", "0.5"), Equivalence::Equivalent);
        assert_eq!(g.judge_equivalence("two thirds", "0.5"), Equivalence::Different);
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn equivalence_garbage_and_empty_gold_are_unjudgeable() {
        let backend = Arc::new(MockBackend::new());
        let g = gw(backend.clone());
        backend.script_messages(&g.equivalence_messages("a", "b"), "no verdict here");
        assert!(matches!(g.judge_equivalence("a", "b"), Equivalence::Unjudgeable { .. }));
        assert!(matches!(g.judge_equivalence("anything", "  "), Equivalence::Unjudgeable { .. }));
        assert_eq!(backend.calls(), 1, "empty gold must not reach the judge");
    }

    #[test]
    fn rubric_parses_last_score_lines_and_normalizes() {
        let backend = Arc::new(MockBackend::new());
        let g = gw(backend.clone());
        let rubric = RubricSpec {
            dimensions: vec![
                RubricDimension { name: "factuality".into(), description: "".into(), min: 0.0, max: 1.0 },
                RubricDimension { name: "clarity".into(), description: "".into(), min: 1.0, max: 5.0 },
            ],
        };
        let transcript = vec![Message::user("q"), Message::assistant("a")];
        let reply = "Let me check. factuality=0.2 at first glance...\n\
                     On reflection:\nfactuality=0.9\nclarity=3";
        backend.script_messages(&g.rubric_messages(&transcript, Some("ctx"), &rubric), reply);
        let scores = g.judge_rubric(&transcript, Some("ctx"), &rubric).unwrap();
        assert_eq!(scores["factuality"], 0.9, "last occurrence wins");
        assert_eq!(scores["clarity"], 0.5, "normalized by (min,max)");
    }

    #[test]
    fn rubric_missing_dimension_preserves_raw_output() {
        let backend = Arc::new(MockBackend::new());
        let g = gw(backend.clone());
        let rubric = RubricSpec::default_quality();
        let transcript = vec![Message::user("q"), Message::assistant("a")];
        backend.script_messages(
            &g.rubric_messages(&transcript, None, &rubric),
            "factuality=1 professionalism=1 but nothing else",
        );
        match g.judge_rubric(&transcript, None, &rubric) {
            Err(GatewayError::JudgeParse { raw }) => assert!(raw.contains("nothing else")),
            other => panic!("expected JudgeParse, got {other:?}"),
        }
    }

    #[test]
    fn rubric_scores_are_clamped_to_unit_interval() {
        let backend = Arc::new(MockBackend::new());
        let g = gw(backend.clone());
        let rubric = RubricSpec {
            dimensions: vec![RubricDimension {
                name: "factuality".into(),
                description: "".into(),
                min: 0.0,
                max: 1.0,
            }],
        };
        let transcript = vec![Message::user("q")];
        backend.script_messages(&g.rubric_messages(&transcript, None, &rubric), "factuality=7");
        let scores = g.judge_rubric(&transcript, None, &rubric).unwrap();
        assert_eq!(scores["factuality"], 1.0);
    }

    #[test]
    fn in_flight_cap_is_respected_under_parallel_load() {
        let backend = Arc::new(MockBackend::new().with_latency(std::time::Duration::from_millis(20)));
        let mut reqs = Vec::new();
        for i in 0..24 {
            let req = one_message_req(&format!("req-{i}"));
            backend.script_messages(&req.messages, "ok");
            reqs.push(req);
        }
        let cfg = EndpointConfig { max_in_flight: 4, ..test_cfg() };
        let g = Arc::new(ModelGateway::new(cfg, backend.clone()).unwrap());
        std::thread::scope(|scope| {
            for req in &reqs {
                let g = Arc::clone(&g);
                scope.spawn(move || {
                    g.complete(req).unwrap();
                });
            }
        });
        assert_eq!(backend.calls(), 24);
        let peak = backend.max_in_flight_seen();
        assert!(peak <= 4, "cap violated: {peak}");
        assert!(peak >= 2, "expected some concurrency, saw {peak}");
    }

    #[test]
    fn endpoint_config_env_override_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("endpoint.toml");
        std::fs::write(&path, "base_url = \"http://example.test\"\napi_key = \"file-key\"\n").unwrap();
        // Env var wins over the file value when present. Set/remove carefully:
        // tests in this binary run in parallel but only this one touches it.
        std::env::set_var(API_KEY_ENV, "env-key");
        let cfg = EndpointConfig::from_file(&path).unwrap();
        std::env::remove_var(API_KEY_ENV);
        assert_eq!(cfg.api_key, "env-key");
        assert_eq!(cfg.base_url, "http://example.test");
        assert_eq!(cfg.max_retries, 2, "defaults fill unspecified keys");

        let bad = EndpointConfig { max_in_flight: 0, ..EndpointConfig::default() };
        assert!(matches!(bad.validate(), Err(GatewayError::InvalidConfig(_))));
    }
}

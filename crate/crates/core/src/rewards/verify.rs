//! Rule-based answer verification with optional judge escalation.
//!
//! The cascade is strictly ordered and short-circuits: exact normalized
//! match, then the extraction-pattern library (first pattern that fires
//! decides), then whole-string numeric comparison. Only answers the rules
//! cannot parse at all escalate to the equivalence judge — correct and
//! incorrect verdicts never trigger a model call.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use super::RewardError;
use crate::gateway::{Equivalence, ModelGateway};
use crate::text::normalize;

/// Verification verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    /// The rules could not interpret the answer; escalation territory.
    Unparsed,
}

/// Which comparison decided the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    /// Whole answers equal after normalization.
    Exact,
    /// A library pattern extracted a span equal to gold after normalization.
    Pattern,
    /// Numeric comparison within tolerance (extracted span or whole string).
    Numeric,
    /// The equivalence judge decided.
    Semantic,
    /// No comparison succeeded (incorrect or unparsed).
    None,
}

/// Full outcome of a verification, kept audit-friendly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierOutcome {
    pub verdict: Verdict,
    pub match_kind: MatchKind,
    /// Span the deciding pattern extracted, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<String>,
    /// Name of the pattern that fired, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    /// Extra failure detail (e.g. the judge's unjudgeable cause).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl VerifierOutcome {
    fn plain(verdict: Verdict, match_kind: MatchKind) -> VerifierOutcome {
        VerifierOutcome { verdict, match_kind, extracted: None, pattern: None, detail: None }
    }

    pub fn is_correct(&self) -> bool {
        self.verdict == Verdict::Correct
    }
}

/// One extraction pattern plus its built-in self-test. Libraries refuse to
/// load any pattern whose `test_input` does not extract `expected`, so a bad
/// fixture fails fast instead of silently mis-grading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub name: String,
    pub pattern: String,
    pub test_input: String,
    pub expected: String,
}

/// Ordered library of extraction patterns. Order is semantic: the first
/// pattern that fires on an answer decides the extraction.
#[derive(Debug)]
pub struct PatternLibrary {
    entries: Vec<(PatternSpec, Regex)>,
}

impl PatternLibrary {
    /// Compiles and self-tests a list of specs.
    pub fn from_specs(specs: Vec<PatternSpec>) -> Result<PatternLibrary, RewardError> {
        let mut entries = Vec::with_capacity(specs.len());
        for spec in specs {
            let re = Regex::new(&spec.pattern).map_err(|e| RewardError::InvalidPattern {
                name: spec.name.clone(),
                reason: e.to_string(),
            })?;
            match extract_with(&re, &spec.test_input) {
                Some(got) if got == spec.expected => {}
                got => {
                    return Err(RewardError::InvalidPattern {
                        name: spec.name.clone(),
                        reason: format!(
                            "self-test failed: expected {:?}, extracted {:?} from {:?}",
                            spec.expected, got, spec.test_input
                        ),
                    });
                }
            }
            entries.push((spec, re));
        }
        Ok(PatternLibrary { entries })
    }

    /// Loads a JSON pattern file (array of [`PatternSpec`]).
    pub fn from_file(path: &std::path::Path) -> Result<PatternLibrary, RewardError> {
        let raw = std::fs::read_to_string(path).map_err(|e| RewardError::InvalidPattern {
            name: path.display().to_string(),
            reason: format!("cannot read pattern file: {e}"),
        })?;
        let specs: Vec<PatternSpec> = serde_json::from_str(&raw).map_err(|e| {
            RewardError::InvalidPattern {
                name: path.display().to_string(),
                reason: format!("malformed pattern file: {e}"),
            }
        })?;
        PatternLibrary::from_specs(specs)
    }

    /// The built-in library (boxed answers, MCQ letters, declared answer
    /// spans, final numbers).
    pub fn builtin() -> &'static PatternLibrary {
        static LIB: OnceLock<PatternLibrary> = OnceLock::new();
        LIB.get_or_init(|| {
            let specs: Vec<PatternSpec> =
                serde_json::from_str(include_str!("../../assets/patterns.json"))
                    .expect("embedded pattern file parses");
            PatternLibrary::from_specs(specs).expect("embedded patterns self-test")
        })
    }

    pub fn specs(&self) -> impl Iterator<Item = &PatternSpec> {
        self.entries.iter().map(|(s, _)| s)
    }

    /// Runs the library over `text`; returns (pattern name, extracted span)
    /// from the first pattern that fires.
    pub fn extract(&self, text: &str) -> Option<(&str, String)> {
        for (spec, re) in &self.entries {
            if let Some(got) = extract_with(re, text) {
                return Some((spec.name.as_str(), got));
            }
        }
        None
    }
}

/// Last match wins (answers restate themselves; the final statement is the
/// one graded). Group 1 if the pattern has one, else the whole match.
fn extract_with(re: &Regex, text: &str) -> Option<String> {
    let caps = re.captures_iter(text).last()?;
    let m = caps.get(1).or_else(|| caps.get(0))?;
    Some(m.as_str().trim().to_string())
}

/// Normalization used for answer comparison: casefold, collapse whitespace,
/// strip one layer of trailing sentence punctuation.
fn comparable(text: &str) -> String {
    let n = normalize(text);
    n.trim_end_matches(['.', ',', ';', ':', '!', '?', '。', '，', '！', '？']).trim_end().to_string()
}

/// Lenient numeric parse: strips leading currency symbols, thousands commas,
/// and a trailing percent sign (the percent is not rescaled).
fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim().trim_start_matches(['$', '¥', '€', '£']).trim();
    let t = t.strip_suffix('%').unwrap_or(t).trim();
    let cleaned: String = t.chars().filter(|c| *c != ',').collect();
    if cleaned.is_empty() {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Relative tolerance against the gold magnitude, with a floor of 1 so
/// near-zero golds compare absolutely.
fn numeric_equal(candidate: f64, gold: f64, tol: f64) -> bool {
    (candidate - gold).abs() <= tol * gold.abs().max(1.0)
}

/// Deterministic verification cascade: exact → pattern extraction →
/// whole-string numeric. Never calls a model.
pub fn verify_rule_based(
    answer: &str,
    gold: &str,
    patterns: &PatternLibrary,
    tol: f64,
) -> VerifierOutcome {
    let ca = comparable(answer);
    let cg = comparable(gold);
    if cg.is_empty() {
        // Nothing to compare against; hand off to escalation, which will
        // report the empty gold as unjudgeable.
        return VerifierOutcome::plain(Verdict::Unparsed, MatchKind::None);
    }
    if ca == cg {
        return VerifierOutcome::plain(Verdict::Correct, MatchKind::Exact);
    }
    if let Some((name, got)) = patterns.extract(answer) {
        let outcome = if comparable(&got) == cg {
            VerifierOutcome::plain(Verdict::Correct, MatchKind::Pattern)
        } else if let (Some(a), Some(g)) = (parse_number(&got), parse_number(gold)) {
            if numeric_equal(a, g, tol) {
                VerifierOutcome::plain(Verdict::Correct, MatchKind::Numeric)
            } else {
                VerifierOutcome::plain(Verdict::Incorrect, MatchKind::None)
            }
        } else {
            VerifierOutcome::plain(Verdict::Incorrect, MatchKind::None)
        };
        return VerifierOutcome { extracted: Some(got), pattern: Some(name.to_string()), ..outcome };
    }
    match (parse_number(answer), parse_number(gold)) {
        (Some(a), Some(g)) => {
            if numeric_equal(a, g, tol) {
                VerifierOutcome::plain(Verdict::Correct, MatchKind::Numeric)
            } else {
                VerifierOutcome::plain(Verdict::Incorrect, MatchKind::None)
            }
        }
        _ => VerifierOutcome::plain(Verdict::Unparsed, MatchKind::None),
    }
}

/// Rule-based verification with judge escalation for unparseable answers
/// only. The judge's `Equivalent` becomes correct/semantic; `Different` and
/// `Unjudgeable` both land as incorrect (conservative), with the unjudgeable
/// cause preserved in `detail`.
pub fn verify_with_escalation(
    gateway: &ModelGateway,
    answer: &str,
    gold: &str,
    patterns: &PatternLibrary,
    tol: f64,
) -> VerifierOutcome {
    let rule = verify_rule_based(answer, gold, patterns, tol);
    if rule.verdict != Verdict::Unparsed {
        return rule;
    }
    match gateway.judge_equivalence(answer, gold) {
        Equivalence::Equivalent => VerifierOutcome::plain(Verdict::Correct, MatchKind::Semantic),
        Equivalence::Different => VerifierOutcome::plain(Verdict::Incorrect, MatchKind::None),
        Equivalence::Unjudgeable { cause } => VerifierOutcome {
            detail: Some(cause),
            ..VerifierOutcome::plain(Verdict::Incorrect, MatchKind::None)
        },
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::mock::MockBackend;
    use crate::gateway::EndpointConfig;

    fn lib() -> &'static PatternLibrary {
        PatternLibrary::builtin()
    }

    #[test]
    fn exact_match_after_normalization() {
        let o = verify_rule_based(" b ", "B", lib(), 1e-6);
        assert_eq!((o.verdict, o.match_kind), (Verdict::Correct, MatchKind::Exact));
    }

    #[test]
    fn mcq_letter_is_extracted_by_pattern() {
        let o = verify_rule_based("The answer is B", "B", lib(), 1e-6);
        assert_eq!((o.verdict, o.match_kind), (Verdict::Correct, MatchKind::Pattern));
        assert_eq!(o.extracted.as_deref(), Some("B"));
        assert_eq!(o.pattern.as_deref(), Some("choice_letter"));
        let wrong = verify_rule_based("The answer is C.", "B", lib(), 1e-6);
        assert_eq!((wrong.verdict, wrong.match_kind), (Verdict::Incorrect, MatchKind::None));
        assert_eq!(wrong.extracted.as_deref(), Some("C"));
    }

    #[test]
    fn near_numbers_pass_within_tolerance() {
        let o = verify_rule_based("105.0001", "105.0", lib(), 1e-3);
        assert_eq!((o.verdict, o.match_kind), (Verdict::Correct, MatchKind::Numeric));
        let o = verify_rule_based("106.2", "105.0", lib(), 1e-3);
        assert_eq!(o.verdict, Verdict::Incorrect);
    }

    #[test]
    fn prose_answers_are_unparsed_not_incorrect() {
        let o = verify_rule_based("roughly one half", "0.5", lib(), 1e-6);
        assert_eq!((o.verdict, o.match_kind), (Verdict::Unparsed, MatchKind::None));
    }

    #[test]
    fn boxed_and_numeric_forms_are_handled() {
        let o = verify_rule_based("compute... \\boxed{1050}", "1050", lib(), 1e-6);
        assert_eq!((o.verdict, o.match_kind), (Verdict::Correct, MatchKind::Pattern));
        assert_eq!(o.pattern.as_deref(), Some("boxed"));
        let o = verify_rule_based("The total premium equals 1,050.", "1050", lib(), 1e-6);
        assert_eq!(o.verdict, Verdict::Correct);
        let o = verify_rule_based("rate is 5%", "5", lib(), 1e-6);
        assert_eq!(o.verdict, Verdict::Correct, "percent sign stripped, not rescaled");
    }

    #[test]
    fn pattern_self_test_rejects_bad_fixture() {
        let bad = PatternSpec {
            name: "broken".into(),
            pattern: r"(\d+)".into(),
            test_input: "abc 12".into(),
            expected: "13".into(),
        };
        match PatternLibrary::from_specs(vec![bad]) {
            Err(RewardError::InvalidPattern { name, reason }) => {
                assert_eq!(name, "broken");
                assert!(reason.contains("self-test"), "{reason}");
            }
            other => panic!("expected InvalidPattern, got {other:?}"),
        }
        let invalid_regex = PatternSpec {
            name: "bad-re".into(),
            pattern: "(unclosed".into(),
            test_input: "".into(),
            expected: "".into(),
        };
        assert!(matches!(
            PatternLibrary::from_specs(vec![invalid_regex]),
            Err(RewardError::InvalidPattern { .. })
        ));
    }

    #[test]
    fn escalation_judges_only_unparsed_answers() {
        let backend = Arc::new(MockBackend::new());
        let cfg = EndpointConfig { backoff_base_ms: 0, ..EndpointConfig::default() };
        let g = ModelGateway::new(cfg, backend.clone()).unwrap();
        backend.script_messages(&g.equivalence_messages("roughly one half", "0.5"), "EQUIVALENT");
        backend.script_messages(&g.equivalence_messages("almost a third", "0.5"), "DIFFERENT");

        let o = verify_with_escalation(&g, "roughly one half", "0.5", lib(), 1e-6);
        assert_eq!((o.verdict, o.match_kind), (Verdict::Correct, MatchKind::Semantic));
        let o = verify_with_escalation(&g, "almost a third", "0.5", lib(), 1e-6);
        assert_eq!((o.verdict, o.match_kind), (Verdict::Incorrect, MatchKind::None));
        assert_eq!(backend.calls(), 2);

        // Parseable answers never reach the judge.
        let o = verify_with_escalation(&g, "The answer is B", "B", lib(), 1e-6);
        assert_eq!(o.match_kind, MatchKind::Pattern);
        assert_eq!(backend.calls(), 2, "no extra judge calls for parseable answers");

        // Unjudgeable output degrades to incorrect with the cause kept.
        let o = verify_with_escalation(&g, "unscripted prose", "0.5", lib(), 1e-6);
        assert_eq!(o.verdict, Verdict::Incorrect);
        assert!(o.detail.is_some());
    }
}

//! Reward kernels: the hybrid scoring machinery used for RL on verifiable and
//! open-ended tasks.
//!
//! Verifiable tasks gate everything on rule-based accuracy and shape the
//! remainder with a length reward; open-ended tasks replace the gate with a
//! weighted rubric mean. Both paths subtract weighted text penalties and
//! floor at zero. Group-relative advantages normalize rewards within a
//! sampling group.

mod penalties;
mod verify;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use penalties::{
    language_consistency, ngram_overlap, repetition_penalty, HallucinationScorer,
    LexicalGroundingScorer, DEFAULT_SCRIPT_ALLOWANCE,
};
pub use verify::{
    verify_rule_based, verify_with_escalation, MatchKind, PatternLibrary, PatternSpec, Verdict,
    VerifierOutcome,
};

/// Errors from reward configuration and computation.
#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("invalid extraction pattern {name}: {reason}")]
    InvalidPattern { name: String, reason: String },
    #[error("empty reward group")]
    EmptyGroup,
    #[error("rubric path requires at least one dimension score")]
    EmptyRubric,
}

/// The four text penalties the composite reward understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// Ungrounded content relative to the evidence context.
    Hallucination,
    /// Verbatim n-gram reuse of the provided context.
    Duplication,
    /// Minority-script mixing.
    Language,
    /// N-gram repetition inside the response itself.
    Repetition,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 4] = [
        PenaltyKind::Hallucination,
        PenaltyKind::Duplication,
        PenaltyKind::Language,
        PenaltyKind::Repetition,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyKind::Hallucination => "hallucination",
            PenaltyKind::Duplication => "duplication",
            PenaltyKind::Language => "language",
            PenaltyKind::Repetition => "repetition",
        }
    }

    pub fn from_str_name(s: &str) -> Option<PenaltyKind> {
        PenaltyKind::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

/// Tunables for reward computation. TOML config files mirror these fields;
/// omitted keys keep the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Constant part of the accuracy-gated reward.
    pub alpha: f64,
    /// Weight of the length reward inside the gate.
    pub beta: f64,
    /// Length (in tokens) at or below which the length reward saturates at 1.
    pub l_min: u32,
    /// Length at or above which the length reward is 0.
    pub l_max: u32,
    /// Relative tolerance for numeric answer comparison.
    pub numeric_tol: f64,
    /// N-gram size for the duplication and repetition penalties.
    pub ngram_n: usize,
    /// Context-overlap fraction tolerated before the duplication penalty
    /// starts counting; only overlap beyond the cap is "excessive".
    pub overlap_cap: f64,
    /// Minority-script allowance for the language penalty.
    pub script_allowance: f64,
    /// Per-penalty weights applied by the composite reward. Kinds absent
    /// from the map weigh 1.
    pub penalty_weights: BTreeMap<PenaltyKind, f64>,
    /// Per-dimension weights for the rubric path. Dimensions absent from the
    /// map weigh 1.
    pub rubric_weights: BTreeMap<String, f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let penalty_weights = PenaltyKind::ALL.iter().map(|k| (*k, 1.0)).collect();
        RewardConfig {
            alpha: 0.9,
            beta: 0.1,
            l_min: 100,
            l_max: 1000,
            numeric_tol: 1e-6,
            ngram_n: 8,
            overlap_cap: 0.5,
            script_allowance: DEFAULT_SCRIPT_ALLOWANCE,
            penalty_weights,
            rubric_weights: BTreeMap::new(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(RewardError::InvalidConfig("alpha must be finite and non-negative".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(RewardError::InvalidConfig("beta must be finite and non-negative".into()));
        }
        if self.l_min >= self.l_max {
            return Err(RewardError::InvalidConfig(format!(
                "l_min ({}) must be below l_max ({})",
                self.l_min, self.l_max
            )));
        }
        if self.numeric_tol.is_nan() || self.numeric_tol < 0.0 {
            return Err(RewardError::InvalidConfig("numeric_tol must be non-negative".into()));
        }
        if self.ngram_n == 0 {
            return Err(RewardError::InvalidConfig("ngram_n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_cap) {
            return Err(RewardError::InvalidConfig("overlap_cap must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.script_allowance) {
            return Err(RewardError::InvalidConfig("script_allowance must lie in [0,1]".into()));
        }
        for (k, w) in &self.penalty_weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(RewardError::InvalidConfig(format!(
                    "penalty weight for {} must be finite and non-negative",
                    k.as_str()
                )));
            }
        }
        for (d, w) in &self.rubric_weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(RewardError::InvalidConfig(format!(
                    "rubric weight for {d} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Loads a TOML reward config; missing keys keep defaults.
    pub fn from_file(path: &std::path::Path) -> Result<RewardConfig, RewardError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            RewardError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: RewardConfig = toml::from_str(&raw).map_err(|e| {
            RewardError::InvalidConfig(format!("bad reward config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fits the length window to a corpus: `l_min` at the 10th percentile of
    /// gold lengths, `l_max` at the 90th (nearest-rank).
    pub fn fit_length_bounds(&mut self, gold_lengths: &[u32]) -> Result<(), RewardError> {
        let Some((lo, hi)) = percentile_bounds(gold_lengths, 0.10, 0.90) else {
            return Err(RewardError::InvalidConfig("cannot fit length bounds to an empty corpus".into()));
        };
        if lo >= hi {
            return Err(RewardError::InvalidConfig(format!(
                "degenerate length distribution: p10 ({lo}) >= p90 ({hi})"
            )));
        }
        self.l_min = lo;
        self.l_max = hi;
        Ok(())
    }
}

/// Nearest-rank percentiles of a length sample; `None` when empty.
pub fn percentile_bounds(lengths: &[u32], lo: f64, hi: f64) -> Option<(u32, u32)> {
    if lengths.is_empty() {
        return None;
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let rank = |p: f64| -> u32 {
        let n = sorted.len() as f64;
        let idx = ((p * n).ceil() as usize).max(1).min(sorted.len()) - 1;
        sorted[idx]
    };
    Some((rank(lo), rank(hi)))
}

/// Clip-style length reward: 1 at or below `l_min`, 0 at or above `l_max`,
/// linear in between.
pub fn length_reward(length_tokens: u32, cfg: &RewardConfig) -> f64 {
    length_reward_bounds(length_tokens, cfg.l_min, cfg.l_max)
}

/// [`length_reward`] with explicit bounds (callers must ensure
/// `l_min < l_max`).
pub fn length_reward_bounds(length_tokens: u32, l_min: u32, l_max: u32) -> f64 {
    let span = (l_max - l_min) as f64;
    ((l_max as f64 - length_tokens as f64) / span).clamp(0.0, 1.0)
}

/// Which scoring path a task uses. Tasks are one or the other — a sample
/// cannot be scored down both paths, and the type makes the ambiguity
/// unrepresentable.
#[derive(Debug, Clone)]
pub enum RewardPath<'a> {
    /// Accuracy-gated path for tasks with a checkable answer.
    Verifiable(&'a VerifierOutcome),
    /// Rubric path for open-ended tasks: judge dimension scores in [0,1].
    Rubric(&'a BTreeMap<String, f64>),
}

/// Fully decomposed reward for one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    /// Accuracy gate: 1.0 or 0.0 on the verifiable path; fixed 1.0 on the
    /// rubric path (the rubric itself carries quality).
    pub r_acc: f64,
    /// Length reward in [0,1].
    pub r_len: f64,
    /// Raw, unweighted penalty values as supplied.
    pub penalties: BTreeMap<PenaltyKind, f64>,
    /// Normalized rubric scores when the rubric path was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubric: Option<BTreeMap<String, f64>>,
    /// Final scalar reward.
    pub composite: f64,
}

/// Combines a scoring path, a response length, and raw penalty inputs into
/// the final scalar reward.
///
/// Verifiable path: `max(0, r_acc * (alpha + beta * r_len) - sum(w_k * p_k))`
/// — an incorrect answer is an exact hard zero regardless of every other
/// term. Rubric path: `max(0, weighted_rubric_mean - sum(w_k * p_k))`.
/// Penalty values arrive raw; `cfg.penalty_weights` is applied here and
/// nowhere else.
pub fn composite_reward(
    path: RewardPath<'_>,
    length_tokens: u32,
    penalties: &BTreeMap<PenaltyKind, f64>,
    cfg: &RewardConfig,
) -> Result<RewardSignal, RewardError> {
    cfg.validate()?;
    let r_len = length_reward(length_tokens, cfg);
    let weighted_penalty: f64 = penalties
        .iter()
        .map(|(k, v)| v * cfg.penalty_weights.get(k).copied().unwrap_or(1.0))
        .sum();
    match path {
        RewardPath::Verifiable(outcome) => {
            let correct = outcome.is_correct();
            let composite = if correct {
                (cfg.alpha + cfg.beta * r_len - weighted_penalty).max(0.0)
            } else {
                // Hard gate: exactly zero, no penalty arithmetic involved.
                0.0
            };
            Ok(RewardSignal {
                r_acc: if correct { 1.0 } else { 0.0 },
                r_len,
                penalties: penalties.clone(),
                rubric: None,
                composite,
            })
        }
        RewardPath::Rubric(scores) => {
            if scores.is_empty() {
                return Err(RewardError::EmptyRubric);
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (dim, score) in scores {
                let w = cfg.rubric_weights.get(dim).copied().unwrap_or(1.0);
                num += w * score;
                den += w;
            }
            if den == 0.0 {
                return Err(RewardError::InvalidConfig(
                    "rubric weights sum to zero over the scored dimensions".into(),
                ));
            }
            let quality = num / den;
            Ok(RewardSignal {
                r_acc: 1.0,
                r_len,
                penalties: penalties.clone(),
                rubric: Some(scores.clone()),
                composite: (quality - weighted_penalty).max(0.0),
            })
        }
    }
}

/// Computes the raw penalty inputs for a response: repetition and language
/// always; duplication only when a context is present; hallucination only
/// when a scorer is supplied and a context is present.
pub fn compute_penalties(
    response: &str,
    context: Option<&str>,
    scorer: Option<&dyn HallucinationScorer>,
    cfg: &RewardConfig,
) -> BTreeMap<PenaltyKind, f64> {
    let mut out = BTreeMap::new();
    out.insert(PenaltyKind::Repetition, repetition_penalty(response, cfg.ngram_n));
    out.insert(
        PenaltyKind::Language,
        language_consistency(response, cfg.script_allowance, 1.0),
    );
    if let Some(ctx) = context {
        // Only overlap past the cap is excessive; grounded answers are
        // allowed to quote their evidence up to it.
        let overlap = ngram_overlap(response, ctx, cfg.ngram_n);
        out.insert(PenaltyKind::Duplication, (overlap - cfg.overlap_cap).max(0.0));
        if let Some(s) = scorer {
            out.insert(PenaltyKind::Hallucination, s.score(response, ctx));
        }
    }
    out
}

/// Group-relative advantages: `(r - mean) / population_std`. A group with
/// (near-)zero variance yields all-zero advantages instead of dividing by
/// zero; an empty group is an error.
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    if rewards.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

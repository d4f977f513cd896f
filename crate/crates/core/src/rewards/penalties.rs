//! Text-statistic penalty kernels.
//!
//! Every kernel is a pure function over the crate tokenizer
//! ([`crate::text::tokenize`]) and returns a raw value in [0,1]. Weighting
//! happens once, inside the composite reward — the kernels themselves never
//! apply config weights (the standalone `weight` parameter of
//! [`language_consistency`] exists for direct use and is passed as 1.0 when
//! collecting raw penalty inputs).

use std::collections::HashSet;

use crate::text::tokenize;

/// Fraction of the response's token n-grams that also occur in `context`.
///
/// Counts are over response n-gram occurrences (not distinct n-grams)
/// against the set of distinct context n-grams. Returns 0 when either side
/// is shorter than `n` tokens.
pub fn ngram_overlap(response: &str, context: &str, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let resp = tokenize(response);
    let ctx = tokenize(context);
    if resp.len() < n || ctx.len() < n {
        return 0.0;
    }
    let ctx_grams: HashSet<&[&str]> = ctx.windows(n).collect();
    let total = resp.len() - n + 1;
    let hits = resp.windows(n).filter(|w| ctx_grams.contains(w)).count();
    hits as f64 / total as f64
}

/// Repetition inside a single text: `1 - distinct_ngrams / total_ngrams`.
/// 0 means every n-gram is unique; values approach 1 as the text loops.
/// Returns 0 when the text has fewer than `n + 1` tokens (no room to repeat).
pub fn repetition_penalty(text: &str, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let toks = tokenize(text);
    if toks.len() < n + 1 {
        return 0.0;
    }
    let total = toks.len() - n + 1;
    let distinct: HashSet<&[&str]> = toks.windows(n).collect();
    1.0 - distinct.len() as f64 / total as f64
}

fn is_cjk(c: char) -> bool {
    matches!(u32::from(c),
        0x3400..=0x4DBF      // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xF900..=0xFAFF    // CJK compatibility ideographs
        | 0x3040..=0x30FF    // hiragana, katakana
        | 0xAC00..=0xD7AF    // hangul syllables
    )
}

fn is_latin(c: char) -> bool {
    c.is_alphabetic() && u32::from(c) < 0x0370
}

/// Penalty for mixed-script responses: the minority-script letter fraction
/// above `allowance`, scaled by `weight`.
///
/// Letters are classified as Latin or CJK; digits, punctuation, and other
/// scripts are ignored. A response written consistently in either script
/// scores 0; a response whose minority script exceeds the allowance pays the
/// excess fraction.
pub fn language_consistency(text: &str, allowance: f64, weight: f64) -> f64 {
    let mut cjk = 0u64;
    let mut latin = 0u64;
    for c in text.chars() {
        if is_cjk(c) {
            cjk += 1;
        } else if is_latin(c) {
            latin += 1;
        }
    }
    let total = cjk + latin;
    if total == 0 {
        return 0.0;
    }
    let minority = cjk.min(latin) as f64 / total as f64;
    (minority - allowance).max(0.0) * weight
}

/// Default minority-script allowance: small amounts of quoted foreign text
/// (product names, clause ids) are free.
pub const DEFAULT_SCRIPT_ALLOWANCE: f64 = 0.05;

/// Pluggable groundedness check used for the hallucination penalty. Returns a
/// value in [0,1]; higher means less grounded in the context.
pub trait HallucinationScorer: Send + Sync {
    fn score(&self, response: &str, context: &str) -> f64;
}

/// Offline stand-in for an entailment model: one minus the mean per-sentence
/// lexical containment of the response in the context. A response whose
/// sentences reuse only context vocabulary scores 0; fully novel sentences
/// score 1.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalGroundingScorer;

impl HallucinationScorer for LexicalGroundingScorer {
    fn score(&self, response: &str, context: &str) -> f64 {
        let ctx: HashSet<String> = tokenize(context).iter().map(|t| t.to_lowercase()).collect();
        let mut containments = Vec::new();
        for sentence in response.split(['.', '!', '?', ';', '\n', '。', '！', '？', '；']) {
            let toks: HashSet<String> = tokenize(sentence).iter().map(|t| t.to_lowercase()).collect();
            if toks.is_empty() {
                continue;
            }
            let hits = toks.iter().filter(|t| ctx.contains(*t)).count();
            containments.push(hits as f64 / toks.len() as f64);
        }
        if containments.is_empty() {
            return 0.0;
        }
        1.0 - containments.iter().sum::<f64>() / containments.len() as f64
    }
}

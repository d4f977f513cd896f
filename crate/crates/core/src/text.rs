//! Deterministic text primitives shared across the pipeline: the documented
//! whitespace-and-punctuation tokenizer, answer normalization, and stable
//! content hashing for ids, mock transcripts, and seeded RNGs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Splits `text` into tokens: maximal runs of alphanumeric characters.
/// Whitespace, punctuation, and symbols all separate tokens.
///
/// This splitter is the unit of account for every length and n-gram
/// computation in the crate. It is deliberately not a model tokenizer so
/// token counts are model-free and bit-stable across runs.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Case-folds and collapses runs of whitespace to single spaces, trimming the
/// ends. Used for answer comparison and the judge short-circuit.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Stable hex digest over a sequence of parts. Parts are length-prefixed so
/// the digest is unambiguous under concatenation.
pub fn content_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Twelve-character id fragment derived from [`content_hash`].
pub fn short_hash(parts: &[&str]) -> String {
    content_hash(parts)[..12].to_string()
}

/// Derives a ChaCha8 RNG from a base seed and a string key, so per-sample
/// randomness is reproducible given (dataset seed, sample id).
pub fn derive_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(s)
}

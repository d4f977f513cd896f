//! Curriculum mixing and staged training schedules.
//!
//! Buckets of training data are categorized (general ability, simple domain,
//! complex domain, hallucination mitigation, long tail) and mixed into
//! per-stage sampling weights. Stage 1 reflects the corpus as-is; stage 2
//! rebalances toward complex reasoning while preserving a fixed general-
//! ability mass, honoring pinned bucket weights, and boosting long-tail
//! buckets so rare skills are not starved. A seeded sampler draws batches
//! from a mixture, and screening plus tier sequencing round out the
//! schedule-construction toolkit.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::Sample;

/// Buckets smaller than this many samples count as long tail.
pub const LONG_TAIL_THRESHOLD: usize = 1000;

/// Errors from curriculum construction.
#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("invalid bucket stats: {0}")]
    InvalidStats(String),
    #[error("mixture targets are invalid: {0}")]
    InvalidTargets(String),
    #[error("stage-2 mixture is infeasible: {0}")]
    Infeasible(String),
    #[error("mixture has no sampleable bucket (all weights or counts are zero)")]
    EmptyMixture,
    #[error("unknown tier name `{0}`")]
    UnknownTierName(String),
    #[error("bucket `{0}` assigned to more than one tier")]
    DuplicateAssignment(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    ParseToml {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

/// Coarse role a bucket plays in the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketCategory {
    /// General-ability data (non-domain).
    General,
    /// Domain data solvable in one or two steps.
    DomainSimple,
    /// Domain data demanding multi-step reasoning.
    DomainComplex,
    /// Refusal / grounding data that counters hallucination.
    HallucinationMitigation,
    /// Rare-skill buckets below the long-tail threshold.
    LongTail,
}

impl BucketCategory {
    pub const ALL: [BucketCategory; 5] = [
        BucketCategory::General,
        BucketCategory::DomainSimple,
        BucketCategory::DomainComplex,
        BucketCategory::HallucinationMitigation,
        BucketCategory::LongTail,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BucketCategory::General => "general",
            BucketCategory::DomainSimple => "domain_simple",
            BucketCategory::DomainComplex => "domain_complex",
            BucketCategory::HallucinationMitigation => "hallucination_mitigation",
            BucketCategory::LongTail => "long_tail",
        }
    }
}

/// Size and role of one data bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket_id: String,
    pub category: BucketCategory,
    pub count: usize,
}

impl BucketStats {
    pub fn new(bucket_id: &str, category: BucketCategory, count: usize) -> BucketStats {
        BucketStats { bucket_id: bucket_id.to_string(), category, count }
    }
}

/// Checks stats for duplicate/empty ids and long-tail consistency: a bucket
/// is categorized `LongTail` if and only if its count is below `threshold`.
/// (General buckets are exempt — general ability is never long tail.)
pub fn validate_stats(stats: &[BucketStats], threshold: usize) -> Result<(), CurriculumError> {
    let mut seen = std::collections::BTreeSet::new();
    for s in stats {
        if s.bucket_id.trim().is_empty() {
            return Err(CurriculumError::InvalidStats("empty bucket id".to_string()));
        }
        if !seen.insert(&s.bucket_id) {
            return Err(CurriculumError::InvalidStats(format!(
                "duplicate bucket id `{}`",
                s.bucket_id
            )));
        }
        if s.category == BucketCategory::General {
            continue;
        }
        let is_small = s.count < threshold;
        let is_tail = s.category == BucketCategory::LongTail;
        if is_small && !is_tail {
            return Err(CurriculumError::InvalidStats(format!(
                "bucket `{}` has {} samples (< {threshold}) but is not categorized long_tail",
                s.bucket_id, s.count
            )));
        }
        if is_tail && !is_small {
            return Err(CurriculumError::InvalidStats(format!(
                "bucket `{}` is categorized long_tail but has {} samples (>= {threshold})",
                s.bucket_id, s.count
            )));
        }
    }
    Ok(())
}

/// Training stage the mixture is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Broad absorption: weights mirror the corpus.
    SftStage1,
    /// Rebalanced: fixed general mass, complexity-tilted domain mass.
    SftStage2,
}

/// A solved mixture: per-bucket sampling weights that sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub stage: Stage,
    pub weights: BTreeMap<String, f64>,
    /// Names of the structural constraints the solver verified.
    pub constraints_satisfied: Vec<String>,
}

impl MixtureSpec {
    pub fn total_mass(&self) -> f64 {
        self.weights.values().sum()
    }

    /// Sum of weights over buckets in `category` per `stats`.
    pub fn category_mass(&self, stats: &[BucketStats], category: BucketCategory) -> f64 {
        stats
            .iter()
            .filter(|s| s.category == category)
            .map(|s| self.weights.get(&s.bucket_id).copied().unwrap_or(0.0))
            .sum()
    }
}

/// Mixture shape targets. Defaults encode the stage-2 rebalance: a quarter
/// of the mass stays on general ability; of the freely assignable domain
/// mass, half goes to complex reasoning and hallucination mitigation, 30%
/// to simple domain tasks, and the remainder spreads pro-rata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureTargets {
    /// Mass reserved for general-ability buckets in stage 2.
    pub general_mass: f64,
    /// Share of free domain mass routed to complex + hallucination buckets.
    pub complex_share: f64,
    /// Share of free domain mass routed to simple domain buckets.
    pub simple_share: f64,
    /// Counts below this are long tail.
    pub long_tail_threshold: usize,
    /// Exact weights pinned per bucket id (domain buckets only).
    pub pinned: BTreeMap<String, f64>,
}

impl Default for MixtureTargets {
    fn default() -> MixtureTargets {
        MixtureTargets {
            general_mass: 0.25,
            complex_share: 0.5,
            simple_share: 0.3,
            long_tail_threshold: LONG_TAIL_THRESHOLD,
            pinned: BTreeMap::new(),
        }
    }
}

impl MixtureTargets {
    /// Loads targets from a TOML file; unspecified fields keep defaults.
    pub fn from_file(path: &str) -> Result<MixtureTargets, CurriculumError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CurriculumError::Io { path: path.to_string(), source })?;
        let targets: MixtureTargets = toml::from_str(&text)
            .map_err(|source| CurriculumError::ParseToml { path: path.to_string(), source })?;
        targets.validate()?;
        Ok(targets)
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        let checks: [(&str, f64); 3] = [
            ("general_mass", self.general_mass),
            ("complex_share", self.complex_share),
            ("simple_share", self.simple_share),
        ];
        for (name, v) in checks {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(CurriculumError::InvalidTargets(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.complex_share + self.simple_share > 1.0 + 1e-12 {
            return Err(CurriculumError::InvalidTargets(format!(
                "complex_share + simple_share must not exceed 1, got {}",
                self.complex_share + self.simple_share
            )));
        }
        for (id, w) in &self.pinned {
            if !w.is_finite() || *w <= 0.0 {
                return Err(CurriculumError::InvalidTargets(format!(
                    "pinned weight for `{id}` must be positive and finite, got {w}"
                )));
            }
        }
        Ok(())
    }
}

fn pro_rata(ids_counts: &[(&str, usize)], mass: f64) -> BTreeMap<String, f64> {
    let total: usize = ids_counts.iter().map(|(_, c)| c).sum();
    let mut out = BTreeMap::new();
    if ids_counts.is_empty() || mass <= 0.0 {
        for (id, _) in ids_counts {
            out.insert((*id).to_string(), 0.0);
        }
        return out;
    }
    if total == 0 {
        // No counts to weight by: split equally.
        let each = mass / ids_counts.len() as f64;
        for (id, _) in ids_counts {
            out.insert((*id).to_string(), each);
        }
        return out;
    }
    for (id, c) in ids_counts {
        out.insert((*id).to_string(), mass * (*c as f64) / total as f64);
    }
    out
}

/// Stage-1 mixture: straight pro-rata over bucket counts (the schedule
/// mirrors the corpus). All-zero counts split equally.
pub fn stage1_mixture(stats: &[BucketStats], targets: &MixtureTargets) -> Result<MixtureSpec, CurriculumError> {
    validate_stats(stats, targets.long_tail_threshold)?;
    if stats.is_empty() {
        return Err(CurriculumError::InvalidStats("no buckets".to_string()));
    }
    let pairs: Vec<(&str, usize)> = stats.iter().map(|s| (s.bucket_id.as_str(), s.count)).collect();
    let weights = pro_rata(&pairs, 1.0);
    Ok(MixtureSpec {
        stage: Stage::SftStage1,
        weights,
        constraints_satisfied: vec!["weights_sum_to_one".to_string(), "pro_rata_by_count".to_string()],
    })
}

/// Stage-2 mixture solver.
///
/// Structure:
/// - general buckets share exactly `targets.general_mass` (pro-rata);
/// - pinned buckets keep their exact pinned weights;
/// - the remaining ("free") domain mass splits by shares:
///   `complex_share` to complex + hallucination buckets, `simple_share` to
///   simple domain buckets, and the residual share to every unpinned domain
///   bucket pro-rata (empty groups fold their share into the residual);
/// - long-tail buckets are then boosted by `long_tail_boost` and the whole
///   unpinned domain block renormalizes back to the free mass, so pinned
///   and general masses are untouched by the boost.
///
/// Feasibility: domain mass (1 − general) must be at least 0.30, pinned
/// weights must fit inside it, and each referenced group must exist.
pub fn stage2_mixture(
    stats: &[BucketStats],
    targets: &MixtureTargets,
    long_tail_boost: f64,
) -> Result<MixtureSpec, CurriculumError> {
    validate_stats(stats, targets.long_tail_threshold)?;
    targets.validate()?;
    if !long_tail_boost.is_finite() || long_tail_boost <= 0.0 {
        return Err(CurriculumError::InvalidTargets(format!(
            "long_tail_boost must be positive and finite, got {long_tail_boost}"
        )));
    }

    let domain_mass = 1.0 - targets.general_mass;
    if domain_mass < 0.30 - 1e-12 {
        return Err(CurriculumError::Infeasible(format!(
            "domain mass 1 - general_mass = {domain_mass:.4} is below the 0.30 floor"
        )));
    }

    let general: Vec<&BucketStats> =
        stats.iter().filter(|s| s.category == BucketCategory::General).collect();
    let domain: Vec<&BucketStats> =
        stats.iter().filter(|s| s.category != BucketCategory::General).collect();
    if general.is_empty() {
        return Err(CurriculumError::Infeasible("no general-ability buckets".to_string()));
    }
    if domain.is_empty() {
        return Err(CurriculumError::Infeasible("no domain buckets".to_string()));
    }

    // Pinned buckets must exist, be domain, and fit the budget.
    let mut pinned_mass = 0.0;
    for (id, w) in &targets.pinned {
        let Some(s) = stats.iter().find(|s| &s.bucket_id == id) else {
            return Err(CurriculumError::Infeasible(format!("pinned bucket `{id}` not in stats")));
        };
        if s.category == BucketCategory::General {
            return Err(CurriculumError::Infeasible(format!(
                "pinned bucket `{id}` is a general bucket; only domain buckets can be pinned"
            )));
        }
        pinned_mass += w;
    }
    if pinned_mass > domain_mass + 1e-12 {
        return Err(CurriculumError::Infeasible(format!(
            "pinned mass {pinned_mass:.4} exceeds the domain budget {domain_mass:.4}"
        )));
    }

    let free_mass = domain_mass - pinned_mass;
    let unpinned: Vec<&BucketStats> = domain
        .iter()
        .copied()
        .filter(|s| !targets.pinned.contains_key(&s.bucket_id))
        .collect();
    if free_mass > 1e-12 && unpinned.is_empty() {
        return Err(CurriculumError::Infeasible(
            "free domain mass remains but every domain bucket is pinned".to_string(),
        ));
    }

    let complex_group: Vec<(&str, usize)> = unpinned
        .iter()
        .filter(|s| {
            matches!(
                s.category,
                BucketCategory::DomainComplex | BucketCategory::HallucinationMitigation
            )
        })
        .map(|s| (s.bucket_id.as_str(), s.count))
        .collect();
    let simple_group: Vec<(&str, usize)> = unpinned
        .iter()
        .filter(|s| s.category == BucketCategory::DomainSimple)
        .map(|s| (s.bucket_id.as_str(), s.count))
        .collect();
    let all_unpinned: Vec<(&str, usize)> =
        unpinned.iter().map(|s| (s.bucket_id.as_str(), s.count)).collect();

    // Empty target groups fold their share into the pro-rata residual so no
    // mass is stranded.
    let mut residual_share = 1.0 - targets.complex_share - targets.simple_share;
    let complex_share = if complex_group.is_empty() {
        residual_share += targets.complex_share;
        0.0
    } else {
        targets.complex_share
    };
    let simple_share = if simple_group.is_empty() {
        residual_share += targets.simple_share;
        0.0
    } else {
        targets.simple_share
    };

    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    let general_pairs: Vec<(&str, usize)> =
        general.iter().map(|s| (s.bucket_id.as_str(), s.count)).collect();
    weights.extend(pro_rata(&general_pairs, targets.general_mass));
    for (id, w) in &targets.pinned {
        weights.insert(id.clone(), *w);
    }
    let mut free: BTreeMap<String, f64> = BTreeMap::new();
    for (id, w) in pro_rata(&complex_group, complex_share * free_mass) {
        *free.entry(id).or_insert(0.0) += w;
    }
    for (id, w) in pro_rata(&simple_group, simple_share * free_mass) {
        *free.entry(id).or_insert(0.0) += w;
    }
    for (id, w) in pro_rata(&all_unpinned, residual_share * free_mass) {
        *free.entry(id).or_insert(0.0) += w;
    }

    // Long-tail boost inside the free block, then renormalize the block back
    // to free_mass so the boost upweights the tail at the expense of other
    // unpinned buckets only.
    let tail_ids: std::collections::BTreeSet<&str> = unpinned
        .iter()
        .filter(|s| s.category == BucketCategory::LongTail)
        .map(|s| s.bucket_id.as_str())
        .collect();
    if long_tail_boost != 1.0 && !tail_ids.is_empty() {
        for (id, w) in free.iter_mut() {
            if tail_ids.contains(id.as_str()) {
                *w *= long_tail_boost;
            }
        }
        let block: f64 = free.values().sum();
        if block > 1e-12 {
            let scale = free_mass / block;
            for w in free.values_mut() {
                *w *= scale;
            }
        }
    }
    weights.extend(free);

    // Every bucket appears in the mixture, if only at weight zero.
    for s in stats {
        weights.entry(s.bucket_id.clone()).or_insert(0.0);
    }

    let spec = MixtureSpec {
        stage: Stage::SftStage2,
        weights,
        constraints_satisfied: vec![
            "weights_sum_to_one".to_string(),
            "general_mass_preserved".to_string(),
            "domain_mass_floor_0.30".to_string(),
            "pinned_masses_preserved".to_string(),
            "complex_simple_ratio_targeted".to_string(),
        ],
    };
    debug_assert!((spec.total_mass() - 1.0).abs() < 1e-9, "mass leak: {}", spec.total_mass());
    Ok(spec)
}

/// Draws `batch_size` bucket ids from the mixture with a seeded RNG.
/// Buckets with zero weight or zero count are never drawn.
pub fn sample_batch(
    spec: &MixtureSpec,
    stats: &[BucketStats],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<String>, CurriculumError> {
    let counts: BTreeMap<&str, usize> =
        stats.iter().map(|s| (s.bucket_id.as_str(), s.count)).collect();
    let sampleable: Vec<(&String, f64)> = spec
        .weights
        .iter()
        .filter(|(id, w)| **w > 0.0 && counts.get(id.as_str()).copied().unwrap_or(0) > 0)
        .map(|(id, w)| (id, *w))
        .collect();
    if sampleable.is_empty() {
        if batch_size == 0 {
            return Ok(Vec::new());
        }
        return Err(CurriculumError::EmptyMixture);
    }
    let dist = WeightedIndex::new(sampleable.iter().map(|(_, w)| *w))
        .expect("weights are positive and finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..batch_size).map(|_| sampleable[dist.sample(&mut rng)].0.clone()).collect())
}

/// Length bounds for screening general-ability data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenBounds {
    /// Minimum instruction length in characters.
    pub min_chars: usize,
    /// Maximum instruction length in characters.
    pub max_chars: usize,
    /// Maximum reasoning-trace length in characters.
    pub think_cap_chars: usize,
}

impl Default for ScreenBounds {
    fn default() -> ScreenBounds {
        ScreenBounds { min_chars: 10, max_chars: 2000, think_cap_chars: 4000 }
    }
}

/// Screens one general-ability sample; `None` means keep, otherwise the
/// rejection reason. The instruction is the last user turn.
pub fn screen_general_sample(sample: &Sample, bounds: &ScreenBounds) -> Option<String> {
    let instruction = sample
        .messages
        .iter()
        .rev()
        .find(|m| m.role == crate::datamodel::Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("");
    let len = instruction.chars().count();
    if len < bounds.min_chars {
        return Some(format!("too short: instruction has {len} chars (< {})", bounds.min_chars));
    }
    if len > bounds.max_chars {
        return Some(format!("too long: instruction has {len} chars (> {})", bounds.max_chars));
    }
    if let Some(think) = &sample.think {
        let tlen = think.chars().count();
        if tlen > bounds.think_cap_chars {
            return Some(format!(
                "long CoT: reasoning has {tlen} chars (> {})",
                bounds.think_cap_chars
            ));
        }
    }
    None
}

/// Fixed tier order for staged training.
pub const TIER_NAMES: [&str; 3] =
    ["knowledge_consolidation", "complex_reasoning", "alignment_robustness"];

/// Assignment of one bucket to a named tier at a difficulty score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierAssignment {
    pub bucket_id: String,
    pub tier: String,
    /// Within-tier ordering key; lower trains earlier.
    pub difficulty: f64,
}

/// One tier of the training plan, buckets in ascending difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierPlanEntry {
    pub tier: String,
    pub buckets: Vec<String>,
}

/// The full fixed-order plan: knowledge consolidation, then complex
/// reasoning, then alignment robustness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierPlan {
    pub entries: Vec<TierPlanEntry>,
}

/// Sequences bucket/tier assignments into the fixed tier order, sorting
/// buckets within a tier by ascending difficulty. Unknown tier names,
/// duplicate bucket assignments, and non-finite difficulties are rejected;
/// tiers with no assignments appear empty rather than vanishing.
pub fn tier_sequence(assignments: &[TierAssignment]) -> Result<TierPlan, CurriculumError> {
    let mut seen = std::collections::BTreeSet::new();
    for a in assignments {
        if !TIER_NAMES.contains(&a.tier.as_str()) {
            return Err(CurriculumError::UnknownTierName(a.tier.clone()));
        }
        if !seen.insert(&a.bucket_id) {
            return Err(CurriculumError::DuplicateAssignment(a.bucket_id.clone()));
        }
        if !a.difficulty.is_finite() {
            return Err(CurriculumError::InvalidStats(format!(
                "bucket `{}` has non-finite difficulty",
                a.bucket_id
            )));
        }
    }
    let entries = TIER_NAMES
        .iter()
        .map(|tier| {
            let mut members: Vec<&TierAssignment> =
                assignments.iter().filter(|a| a.tier == *tier).collect();
            members.sort_by(|a, b| {
                a.difficulty.total_cmp(&b.difficulty).then_with(|| a.bucket_id.cmp(&b.bucket_id))
            });
            TierPlanEntry {
                tier: (*tier).to_string(),
                buckets: members.into_iter().map(|a| a.bucket_id.clone()).collect(),
            }
        })
        .collect();
    Ok(TierPlan { entries })
}

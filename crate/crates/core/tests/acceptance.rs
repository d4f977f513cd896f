//! Acceptance gate: one test per release criterion, each printing a
//! `[PASS]`/`[FAIL]` line. Tolerances are pinned in code next to each check.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see every line.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use alignkit_core::curriculum::{
    sample_batch, stage2_mixture, BucketCategory, BucketStats, MixtureTargets,
};
use alignkit_core::datamodel::{
    append_records, assistant_content, read_samples, stratify, validate_sample, BusinessArea,
    Bucket, DatasetManifest, Difficulty, Message, Pipeline, Provenance, Sample, SampleFormat,
    StratifyKey, ValidatorVerdict,
};
use alignkit_core::evaluation::{
    aggregate_report, render_table, report_from_rows, run_eval_items, EvalItem, LedgerOutcome,
};
use alignkit_core::gateway::mock::{MockBackend, ALWAYS_FAIL};
use alignkit_core::gateway::{EndpointConfig, ModelGateway};
use alignkit_core::loops::{
    batch_yield, generation_messages, prompt_eval_messages, refine_messages, reflection_messages,
    rewrite_messages, run_answer_loop, run_prompt_loop, AnswerLoopTrace, AnswerVerifier,
    ErrorDigestEntry, ExactMatchScorer, LoopOutcome, RuleVerifier, ValidationCase,
};
use alignkit_core::rag_adapt::{route_rag_batch, validator_messages, RagIngestRecord};
use alignkit_core::rewards::{
    composite_reward, compute_penalties, grpo_advantages, length_reward, ngram_overlap,
    repetition_penalty, verify_rule_based, MatchKind, PatternLibrary, PenaltyKind, RewardConfig,
    RewardPath, Verdict, VerifierOutcome,
};
use alignkit_core::synthesis::{
    build_alignment_sample, build_sop_cot_sample, format_knowledge_injection, DistractorSpec,
    KnowledgeQA, Perturbation, SopSchema, SopTrace,
};
use alignkit_core::text::derive_rng;
use rand::Rng;

fn pass(name: &str, detail: &str) {
    println!("[PASS] {name}: {detail}");
}

fn gate(name: &str, ok: bool, detail: String) {
    if ok {
        pass(name, &detail);
    } else {
        panic!("[FAIL] {name}: {detail}");
    }
}

fn mock_gateway(max_retries: u32) -> (Arc<MockBackend>, ModelGateway) {
    let backend = Arc::new(MockBackend::new());
    let cfg = EndpointConfig { backoff_base_ms: 0, max_retries, ..EndpointConfig::default() };
    let gateway = ModelGateway::new(cfg, backend.clone()).expect("config is valid");
    (backend, gateway)
}

// ---------------------------------------------------------------------------
// Criterion 1: leaderboard table arithmetic regression
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct LeaderboardRow {
    model: String,
    insurance: Vec<Option<f64>>,
    printed_insurance_avg: Option<f64>,
    printed_general_avg: f64,
    printed_two_avg: f64,
}

#[derive(serde::Deserialize)]
struct LeaderboardFixture {
    rows: Vec<LeaderboardRow>,
}

/// Every complete row of the reference leaderboard must be reproduced by
/// `aggregate_report`: its insurance average within ±0.01 and its two-group
/// average within ±0.01.
///
/// KNOWN RED: row m10's published two-group average is arithmetically
/// inconsistent with the row's own data — mean(77.41, 82.34) = 79.87, but
/// the published cell reads 79.01, which duplicates the adjacent row's
/// value. Every other complete row (12 of 13) reproduces within tolerance,
/// and m10's own insurance average also reproduces, isolating the defect to
/// that single published cell. The harness computes correct arithmetic, so
/// this test reports the discrepancy rather than encoding the typo.
#[test]
fn c01_table_regression_reproduces_printed_averages() {
    const NAME: &str = "table-regression";
    const TOL: f64 = 0.01;
    let started = Instant::now();

    let raw = include_str!("fixtures/leaderboard.json");
    let fixture: LeaderboardFixture = serde_json::from_str(raw).expect("fixture parses");

    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut mismatches: Vec<String> = Vec::new();
    for row in &fixture.rows {
        let scores: Vec<f64> = row.insurance.iter().flatten().copied().collect();
        if scores.len() != 4 {
            skipped += 1;
            continue; // rows with missing insurance scores are excluded
        }
        checked += 1;
        let mut groups = BTreeMap::new();
        groups.insert("insurance".to_string(), scores);
        groups.insert("general".to_string(), vec![row.printed_general_avg]);
        let report = aggregate_report(&row.model, &groups).expect("non-empty groups");
        let ins = report.group_avgs["insurance"];
        let two = report.two_avg.expect("both groups present");

        let printed_ins = row.printed_insurance_avg.expect("complete rows print an average");
        if (ins - printed_ins).abs() > TOL {
            mismatches.push(format!(
                "{}: insurance avg computed {ins:.4} vs printed {printed_ins} (|Δ| = {:.4} > {TOL})",
                row.model,
                (ins - printed_ins).abs()
            ));
        }
        if (two - row.printed_two_avg).abs() > TOL {
            mismatches.push(format!(
                "{}: two-group avg computed {two:.4} vs printed {} (|Δ| = {:.4} > {TOL}); \
                 mean({ins:.2}, {}) = {two:.4}, so the printed cell is inconsistent with its own row",
                row.model,
                row.printed_two_avg,
                (two - row.printed_two_avg).abs(),
                row.printed_general_avg,
            ));
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "[FAIL] {NAME}: took {elapsed:?}, budget 1s");
    gate(
        NAME,
        mismatches.is_empty(),
        format!(
            "{checked} complete rows checked ({skipped} partial excluded), tolerance ±{TOL}, {:?}; \
             mismatches: {}",
            elapsed,
            if mismatches.is_empty() { "none".to_string() } else { mismatches.join("; ") }
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: length-reward closed form
// ---------------------------------------------------------------------------

#[test]
fn c02_length_reward_matches_closed_form_exhaustively() {
    const NAME: &str = "length-reward-closed-form";
    let started = Instant::now();
    let cfg = RewardConfig { l_min: 100, l_max: 1000, ..RewardConfig::default() };

    for len in 0u32..=2000 {
        let got = length_reward(len, &cfg);
        // Independent closed form: clip((l_max − L) / (l_max − l_min), 0, 1).
        let oracle = ((1000.0f64 - len as f64) / 900.0).clamp(0.0, 1.0);
        assert!(
            got.to_bits() == oracle.to_bits(),
            "[FAIL] {NAME}: L={len}: got {got}, closed form {oracle}"
        );
    }
    // Pinned boundary cases.
    assert_eq!(length_reward(0, &cfg), 1.0, "[FAIL] {NAME}: L=0");
    assert_eq!(length_reward(100, &cfg), 1.0, "[FAIL] {NAME}: L=l_min");
    assert_eq!(length_reward(550, &cfg), 0.5, "[FAIL] {NAME}: midpoint");
    assert_eq!(length_reward(1000, &cfg), 0.0, "[FAIL] {NAME}: L=l_max");
    assert_eq!(length_reward(2000, &cfg), 0.0, "[FAIL] {NAME}: L=2·l_max");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "[FAIL] {NAME}: took {elapsed:?}, budget 1s");
    pass(NAME, &format!("2001 lengths bit-exact vs closed form, boundaries 1.0/0.5/0.0, {elapsed:?}"));
}

// ---------------------------------------------------------------------------
// Criterion 3: accuracy gating
// ---------------------------------------------------------------------------

#[test]
fn c03_accuracy_gate_zeroes_composite() {
    const NAME: &str = "accuracy-gate";
    let mut rng = derive_rng(0xACCE97, "accuracy-gate");
    let incorrect = VerifierOutcome {
        verdict: Verdict::Incorrect,
        match_kind: MatchKind::None,
        extracted: None,
        pattern: None,
        detail: None,
    };

    for trial in 0..1000 {
        let mut cfg = RewardConfig::default();
        for kind in PenaltyKind::ALL {
            cfg.penalty_weights.insert(kind, rng.gen_range(0.0..4.0));
        }
        let mut penalties = BTreeMap::new();
        for kind in PenaltyKind::ALL {
            if rng.gen_bool(0.7) {
                penalties.insert(kind, rng.gen_range(0.0..1.5));
            }
        }
        let length: u32 = rng.gen_range(0..3000);
        let signal = composite_reward(RewardPath::Verifiable(&incorrect), length, &penalties, &cfg)
            .expect("config is valid");
        assert!(
            signal.composite.to_bits() == 0.0f64.to_bits() && signal.r_acc == 0.0,
            "[FAIL] {NAME}: trial {trial}: r_acc=0 must force composite exactly 0, got {}",
            signal.composite
        );
    }
    pass(NAME, "1000 randomized (penalty, r_len) configs with r_acc=0 all gave composite exactly 0");
}

// ---------------------------------------------------------------------------
// Criterion 4: GRPO normalization
// ---------------------------------------------------------------------------

#[test]
fn c04_grpo_normalization_properties() {
    const NAME: &str = "grpo-normalization";
    let mut rng = derive_rng(0x62F0, "grpo");
    let mut checked = 0;
    while checked < 1000 {
        let size = rng.gen_range(2usize..=64);
        let rewards: Vec<f64> = (0..size).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mean = rewards.iter().sum::<f64>() / size as f64;
        let std =
            (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / size as f64).sqrt();
        if std <= 1e-12 {
            continue; // astronomically unlikely, but the criterion excludes it
        }
        checked += 1;
        let adv = grpo_advantages(&rewards).expect("non-empty group");
        let a_mean = adv.iter().sum::<f64>() / size as f64;
        let a_std =
            (adv.iter().map(|a| (a - a_mean).powi(2)).sum::<f64>() / size as f64).sqrt();
        assert!(
            a_mean.abs() <= 1e-9,
            "[FAIL] {NAME}: group {checked} advantage mean {a_mean:e} exceeds 1e-9"
        );
        assert!(
            (a_std - 1.0).abs() <= 1e-6,
            "[FAIL] {NAME}: group {checked} advantage std {a_std} not within 1e-6 of 1"
        );
    }
    // Constant groups yield all-zero advantages.
    let zeros = grpo_advantages(&[0.7; 9]).unwrap();
    assert!(zeros.iter().all(|a| *a == 0.0), "[FAIL] {NAME}: constant group must zero out");
    // Pinned two-element case.
    let pair = grpo_advantages(&[1.0, 0.0]).unwrap();
    assert!(
        (pair[0] - 1.0).abs() < 1e-12 && (pair[1] + 1.0).abs() < 1e-12,
        "[FAIL] {NAME}: [1,0] must normalize to [1,-1], got {pair:?}"
    );
    pass(NAME, "1000 random groups: |mean| ≤ 1e-9, std within 1e-6 of 1; constant → zeros; [1,0] → [1,-1]");
}

// ---------------------------------------------------------------------------
// Criterion 5: routing totality
// ---------------------------------------------------------------------------

fn routing_fixture() -> Vec<RagIngestRecord> {
    (0..30)
        .map(|i| RagIngestRecord {
            doc: format!("Clause {i}: the deductible for tier {i} is {} dollars.", 100 * (i + 1)),
            question: format!("What is the deductible for tier {i}?"),
            answer: format!("{} dollars.", 100 * (i + 1)),
            answerable: Some(true),
        })
        .collect()
}

fn script_routing(backend: &MockBackend, records: &[RagIngestRecord]) {
    for (i, r) in records.iter().enumerate() {
        let msgs = validator_messages(&r.question, &r.answer, &r.doc);
        match i % 3 {
            0 => backend.script_messages(&msgs, "CONSISTENT"),
            1 => backend.script_messages(&msgs, "INCONSISTENT"),
            _ => backend.script_failing(&msgs, "unused", ALWAYS_FAIL),
        }
    }
}

#[test]
fn c05_routing_totality_lands_10_10_10() {
    const NAME: &str = "routing-totality";
    let records = routing_fixture();

    let run = || -> Vec<u8> {
        let (backend, gateway) = mock_gateway(0);
        script_routing(&backend, &records);
        let routed = route_rag_batch(&gateway, &records);
        let mut buf = Vec::new();
        for (decision, sample) in &routed {
            serde_json::to_writer(&mut buf, decision).unwrap();
            buf.push(b'\n');
            serde_json::to_writer(&mut buf, sample).unwrap();
            buf.push(b'\n');
        }
        buf
    };

    let (backend, gateway) = mock_gateway(0);
    script_routing(&backend, &records);
    let routed = route_rag_batch(&gateway, &records);
    let count = |b: Bucket| routed.iter().filter(|(d, _)| d.bucket == b).count();
    let (g, r, q) = (count(Bucket::Generation), count(Bucket::Refusal), count(Bucket::Quarantine));
    assert_eq!(
        (g, r, q),
        (10, 10, 10),
        "[FAIL] {NAME}: expected 10/10/10 generation/refusal/quarantine, got {g}/{r}/{q}"
    );
    for (decision, sample) in &routed {
        assert!(
            validate_sample(sample).is_empty(),
            "[FAIL] {NAME}: routed sample {} violates schema",
            decision.sample_id
        );
        let expect = match decision.verdict {
            ValidatorVerdict::Consistent => Bucket::Generation,
            ValidatorVerdict::Inconsistent => Bucket::Refusal,
            ValidatorVerdict::Error => Bucket::Quarantine,
        };
        assert_eq!(decision.bucket, expect, "[FAIL] {NAME}: verdict/bucket mismatch");
    }

    let first = run();
    let second = run();
    assert!(first == second, "[FAIL] {NAME}: rerun is not bit-identical");
    pass(NAME, "30 scripted records landed exactly 10/10/10; rerun bit-identical");
}

// ---------------------------------------------------------------------------
// Criterion 6: loop contracts
// ---------------------------------------------------------------------------

fn loop_sample(id: &str, question: &str, gold: &str) -> Sample {
    Sample {
        id: id.to_string(),
        task_type: "premium_calculation".to_string(),
        business_area: BusinessArea::ILR,
        format: SampleFormat::Extraction,
        difficulty: Difficulty::Complex,
        messages: vec![Message::user(question)],
        think: None,
        answer: gold.to_string(),
        context: None,
        bucket: Bucket::Unassigned,
        provenance: Provenance {
            source: "acceptance".to_string(),
            pipeline: Pipeline::SelfDistill,
            iteration: 0,
            validator_verdict: None,
        },
    }
}

#[test]
fn c06_loop_contracts() {
    const NAME: &str = "loop-contracts";
    let verifier = RuleVerifier::new(1e-6);

    // (a) fail-then-pass accepts at iteration 1 with a 2-verdict trace.
    let (backend, gateway) = mock_gateway(0);
    let sample = loop_sample("acc-1", "Compute the blended premium.", "1050");
    let bad = "<think>missed the rider</think>\n990";
    let good = "<think>base 1000 + rider 50</think>\n1050";
    backend.script_messages(&generation_messages(&sample).unwrap(), bad);
    let reason = verifier.verify("990", &sample).reason;
    let reflection = "The rider premium was dropped from the total.";
    backend.script_messages(&reflection_messages(&sample, bad, &reason).unwrap(), reflection);
    backend.script_messages(&rewrite_messages(&sample, bad, reflection).unwrap(), good);
    match run_answer_loop(&gateway, &sample, &verifier, 3).unwrap() {
        LoopOutcome::Accepted { sample: accepted, trace } => {
            assert_eq!(
                accepted.provenance.iteration, 1,
                "[FAIL] {NAME}: fail-then-pass must accept at iteration 1"
            );
            assert_eq!(
                trace.verify_count(),
                2,
                "[FAIL] {NAME}: fail-then-pass must record exactly 2 verdicts"
            );
        }
        other => panic!("[FAIL] {NAME}: expected acceptance, got {other:?}"),
    }

    // (b) always-fail with max_iters = 3 rejects with 3 verdicts.
    let (backend, gateway) = mock_gateway(0);
    let sample_b = loop_sample("acc-2", "Compute the surcharge.", "77");
    backend.script_messages(&generation_messages(&sample_b).unwrap(), bad);
    let reason_b = verifier.verify("990", &sample_b).reason;
    backend.script_messages(&reflection_messages(&sample_b, bad, &reason_b).unwrap(), reflection);
    backend.script_messages(&rewrite_messages(&sample_b, bad, reflection).unwrap(), bad);
    match run_answer_loop(&gateway, &sample_b, &verifier, 3).unwrap() {
        LoopOutcome::Rejected { trace } => {
            assert_eq!(
                trace.verify_count(),
                3,
                "[FAIL] {NAME}: always-fail must record exactly max_iters=3 verdicts"
            );
        }
        other => panic!("[FAIL] {NAME}: expected rejection, got {other:?}"),
    }

    // (c) improving prompt loop [0.67, 0.80, 0.93] returns the round-2 prompt.
    let cases: Vec<ValidationCase> = (0..100)
        .map(|i| ValidationCase {
            id: format!("v{i:03}"),
            input: format!("classify claim {i}"),
            gold: "covered".to_string(),
        })
        .collect();
    let script_eval = |backend: &MockBackend, prompt: &str, correct: usize| {
        for (i, case) in cases.iter().enumerate() {
            let out = if i < correct { "covered" } else { "denied" };
            backend.script_messages(&prompt_eval_messages(prompt, &case.input), out);
        }
    };
    let digest_after = |correct: usize| -> Vec<ErrorDigestEntry> {
        (correct..100)
            .map(|i| ErrorDigestEntry {
                case_id: format!("v{i:03}"),
                summary: "expected `covered`, got `denied`".to_string(),
            })
            .collect()
    };
    let (backend, gateway) = mock_gateway(0);
    let (p0, p1, p2) = ("Decide coverage.", "Decide coverage precisely.", "Decide coverage; answer covered or denied.");
    script_eval(&backend, p0, 67);
    backend.script_messages(&refine_messages(1, p0, &digest_after(67)), p1);
    script_eval(&backend, p1, 80);
    backend.script_messages(&refine_messages(2, p1, &digest_after(80)), p2);
    script_eval(&backend, p2, 93);
    let state = run_prompt_loop(&gateway, p0, &cases, &ExactMatchScorer, 2).unwrap();
    assert_eq!(
        state.accuracy_trace,
        vec![0.67, 0.80, 0.93],
        "[FAIL] {NAME}: improving trace mismatch"
    );
    assert_eq!(state.best.prompt, p2, "[FAIL] {NAME}: best must be the round-2 prompt");
    assert_eq!(state.best.round, 2, "[FAIL] {NAME}: best round");

    // (d) declining prompt loop [0.80, 0.75, 0.70] returns the initial prompt.
    let (backend, gateway) = mock_gateway(0);
    let (q1, q2) = ("Terse rewrite.", "Terser rewrite.");
    script_eval(&backend, p0, 80);
    backend.script_messages(&refine_messages(1, p0, &digest_after(80)), q1);
    script_eval(&backend, q1, 75);
    backend.script_messages(&refine_messages(2, p0, &digest_after(80)), q2);
    script_eval(&backend, q2, 70);
    let state = run_prompt_loop(&gateway, p0, &cases, &ExactMatchScorer, 2).unwrap();
    assert_eq!(
        state.accuracy_trace,
        vec![0.80, 0.75, 0.70],
        "[FAIL] {NAME}: declining trace mismatch"
    );
    assert_eq!(state.best.prompt, p0, "[FAIL] {NAME}: declining run must keep the initial prompt");
    assert_eq!(state.best.round, 0, "[FAIL] {NAME}: declining run best round");

    // (e) batch_yield on the 40-outcome fixture: 37 accepted → 0.925.
    let outcomes: Vec<Result<LoopOutcome, alignkit_core::loops::LoopError>> = (0..40)
        .map(|i| {
            if i < 37 {
                Ok(LoopOutcome::Accepted {
                    sample: Box::new(loop_sample(&format!("y-{i}"), "q", "1")),
                    trace: AnswerLoopTrace::default(),
                })
            } else {
                Ok(LoopOutcome::Rejected { trace: AnswerLoopTrace::default() })
            }
        })
        .collect();
    let summary = batch_yield(&outcomes);
    assert!(
        summary.yield_rate.to_bits() == 0.925f64.to_bits(),
        "[FAIL] {NAME}: 37/40 must yield exactly 0.925, got {}",
        summary.yield_rate
    );
    pass(
        NAME,
        "fail-then-pass accepted at iter 1 (2 verdicts); always-fail rejected with 3; \
         prompt loop 0.67→0.80→0.93 picked round 2, 0.80→0.75→0.70 kept round 0; 37/40 = 0.925",
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: mixture constraints
// ---------------------------------------------------------------------------

#[test]
fn c07_mixture_constraints_hold_for_random_configurations() {
    const NAME: &str = "mixture-constraints";
    let mut rng = derive_rng(0x31c7, "mixtures");
    let targets = MixtureTargets::default();

    for config in 0..200 {
        // ≥1 bucket per category; long-tail counts below the threshold, the
        // rest above it.
        let mut stats = Vec::new();
        let mut push = |prefix: &str, cat: BucketCategory, n: usize, lo: usize, hi: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            for k in 0..n {
                stats.push(BucketStats::new(
                    &format!("{prefix}_{k}"),
                    cat,
                    rng.gen_range(lo..hi),
                ));
            }
        };
        push("gen", BucketCategory::General, rng.gen_range(1..4), 1000, 80_000, &mut rng);
        push("simple", BucketCategory::DomainSimple, rng.gen_range(1..4), 1000, 50_000, &mut rng);
        push("complex", BucketCategory::DomainComplex, rng.gen_range(1..4), 1000, 50_000, &mut rng);
        push("halluc", BucketCategory::HallucinationMitigation, rng.gen_range(1..3), 1000, 20_000, &mut rng);
        push("tail", BucketCategory::LongTail, rng.gen_range(1..4), 1, 1000, &mut rng);

        let mut tail_weights: Vec<BTreeMap<String, f64>> = Vec::new();
        for boost in [1.0, 2.0, 4.0] {
            let spec = stage2_mixture(&stats, &targets, boost)
                .unwrap_or_else(|e| panic!("[FAIL] {NAME}: config {config} infeasible: {e}"));
            let total = spec.total_mass();
            assert!(
                (total - 1.0).abs() <= 1e-9,
                "[FAIL] {NAME}: config {config} boost {boost}: weights sum {total}, not 1 ±1e-9"
            );
            let general = spec.category_mass(&stats, BucketCategory::General);
            assert!(
                (general - 0.25).abs() <= 1e-6,
                "[FAIL] {NAME}: config {config} boost {boost}: general mass {general}, not 0.25 ±1e-6"
            );
            let domain = total - general;
            assert!(
                domain >= 0.30 - 1e-9,
                "[FAIL] {NAME}: config {config} boost {boost}: domain mass {domain} below 0.30"
            );
            tail_weights.push(
                stats
                    .iter()
                    .filter(|s| s.category == BucketCategory::LongTail)
                    .map(|s| (s.bucket_id.clone(), spec.weights[&s.bucket_id]))
                    .collect(),
            );
        }
        // Pairwise boost monotonicity per tail bucket across 1 < 2 < 4.
        for (id, w1) in &tail_weights[0] {
            let w2 = tail_weights[1][id];
            let w4 = tail_weights[2][id];
            assert!(
                *w1 < w2 && w2 < w4,
                "[FAIL] {NAME}: config {config}: tail `{id}` not monotone under boost: {w1} {w2} {w4}"
            );
        }
    }

    // Sampler fidelity: 100k draws match weights within 1% per bucket.
    let stats = vec![
        BucketStats::new("gen_chat", BucketCategory::General, 40_000),
        BucketStats::new("gen_code", BucketCategory::General, 10_000),
        BucketStats::new("ins_simple", BucketCategory::DomainSimple, 20_000),
        BucketStats::new("ins_complex", BucketCategory::DomainComplex, 8_000),
        BucketStats::new("ins_refusal", BucketCategory::HallucinationMitigation, 4_000),
        BucketStats::new("ins_tail", BucketCategory::LongTail, 500),
    ];
    let spec = stage2_mixture(&stats, &targets, 2.0).unwrap();
    let draws = sample_batch(&spec, &stats, 100_000, 424242).unwrap();
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &draws {
        *freq.entry(d.as_str()).or_insert(0) += 1;
    }
    for (id, w) in &spec.weights {
        let f = *freq.get(id.as_str()).unwrap_or(&0) as f64 / draws.len() as f64;
        assert!(
            (f - w).abs() <= 0.01,
            "[FAIL] {NAME}: bucket `{id}` drawn at {f:.4}, weight {w:.4} (|Δ| > 1%)"
        );
    }
    pass(
        NAME,
        "200 random configs: Σw = 1 ±1e-9, general 0.25 ±1e-6, domain ≥ 0.30, boost 1<2<4 monotone; \
         100k draws within 1% of weights",
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: text penalty kernels
// ---------------------------------------------------------------------------

#[test]
fn c08_text_penalty_kernels() {
    const NAME: &str = "text-penalties";
    let mut rng = derive_rng(0x7e57, "penalties");

    // 100 generated fixtures: self-overlap is 1; disjoint-vocabulary overlap is 0.
    for trial in 0..100 {
        let n = rng.gen_range(1usize..4);
        let len = rng.gen_range(n..30);
        let a: String = (0..len).map(|k| format!("alpha{k} ")).take(len).collect();
        let b: String = (0..len).map(|k| format!("beta{k} ")).take(len).collect();
        let self_overlap = ngram_overlap(&a, &a, n);
        assert!(
            self_overlap == 1.0,
            "[FAIL] {NAME}: trial {trial}: self overlap must be exactly 1, got {self_overlap}"
        );
        let disjoint = ngram_overlap(&a, &b, n);
        assert!(
            disjoint == 0.0,
            "[FAIL] {NAME}: trial {trial}: disjoint overlap must be exactly 0, got {disjoint}"
        );
    }

    // Pinned repetition value: 5 tokens, 1 distinct → 1 − 1/5 = 0.8.
    let rep = repetition_penalty("a a a a a", 1);
    assert!(
        rep.to_bits() == 0.8f64.to_bits(),
        "[FAIL] {NAME}: repetition_penalty(\"a a a a a\", 1) must be exactly 0.8, got {rep}"
    );

    // Single-script texts carry no language penalty.
    let cfg = RewardConfig::default();
    for text in ["The policy covers water damage in full.", "本保险涵盖全部水损赔偿责任。"] {
        let penalties = compute_penalties(text, None, None, &cfg);
        let lang = penalties.get(&PenaltyKind::Language).copied().unwrap_or(0.0);
        assert!(
            lang == 0.0,
            "[FAIL] {NAME}: single-script text scored language penalty {lang}: {text}"
        );
    }
    pass(NAME, "100 fixtures: self=1, disjoint=0; repetition pinned 0.8; single-script language penalty 0");
}

// ---------------------------------------------------------------------------
// Criteria 9 + 10: end-to-end smoke and sample-format conformance
// ---------------------------------------------------------------------------

struct SmokeCorpus {
    knowledge: Vec<Sample>,
    mcq: Vec<Sample>,
    sop: Vec<Sample>,
    corrected: Vec<Sample>,
    routed: Vec<Sample>,
}

impl SmokeCorpus {
    fn all(&self) -> Vec<&Sample> {
        self.knowledge
            .iter()
            .chain(&self.mcq)
            .chain(&self.sop)
            .chain(&self.corrected)
            .chain(&self.routed)
            .collect()
    }
}

/// Runs the full offline pipeline once and returns every artifact as bytes,
/// so reruns can be compared bit-for-bit.
fn smoke_run(dir: &std::path::Path) -> (SmokeCorpus, Vec<u8>) {
    const SEED: u64 = 20240817;

    // --- synth: knowledge injection (20), alignment MCQ (10), SOP CoT (5).
    let knowledge: Vec<Sample> = (0..20)
        .map(|i| {
            let qa = KnowledgeQA {
                question: format!("What does endorsement E-{i:02} cover?"),
                answer: format!("Endorsement E-{i:02} extends coverage to peril class {i}."),
                source: "policy_handbook_v3".to_string(),
            };
            format_knowledge_injection(&qa).expect("valid QA")
        })
        .collect();

    let mcq: Vec<Sample> = (0..10)
        .map(|i| {
            let spec = DistractorSpec {
                correct_option: format!("Deductible for plan {i} is {} dollars", 250 * (i + 1)),
                distractors: vec![
                    (
                        format!("Deductible for plan {i} is {} dollars", 250 * (i + 1) + 50),
                        Perturbation::NumericTamper,
                    ),
                    (
                        format!("Deductible for plan {i} is waived entirely"),
                        Perturbation::SemanticSwap,
                    ),
                ],
                clause_citation: format!("Clause {}.2", i + 3),
            };
            let sop = SopTrace::new(
                SopSchema::Alignment3,
                &[
                    &format!("The question concerns plan {i}'s deductible."),
                    "The attribute at issue is the deductible amount.",
                    "Only one option matches the cited clause.",
                ],
            );
            build_alignment_sample(
                &format!("Which statement about plan {i}'s deductible is correct?"),
                &spec,
                &sop,
                SEED,
            )
            .expect("valid MCQ spec")
        })
        .collect();

    let sop: Vec<Sample> = (0..5)
        .map(|i| {
            let trace = SopTrace::new(
                SopSchema::Underwriting4,
                &[
                    &format!("Applicant {i} reports height, weight, and history."),
                    "Elevated BMI and a prior claim are the risk factors.",
                    "Manual rule M-12 applies above the BMI cutoff.",
                    "Route to manual underwriting.",
                ],
            );
            build_sop_cot_sample(
                &format!("Case file {i}: applicant with elevated BMI and one prior claim."),
                &trace,
                "Refer to manual underwriting",
            )
            .expect("valid SOP trace")
        })
        .collect();

    // --- loops: five answer loops, all scripted to pass on first generate.
    let (backend, gateway) = mock_gateway(0);
    let loop_samples: Vec<Sample> = (0..5)
        .map(|i| {
            loop_sample(
                &format!("loop-{i}"),
                &format!("Compute the annual premium for rider profile {i}."),
                &format!("{}", 1000 + 10 * i),
            )
        })
        .collect();
    for s in &loop_samples {
        backend.script_messages(
            &generation_messages(s).unwrap(),
            &format!("<think>rate table lookup</think>\n{}", s.answer),
        );
    }
    let verifier = RuleVerifier::new(1e-6);
    let corrected: Vec<Sample> = loop_samples
        .iter()
        .map(|s| match run_answer_loop(&gateway, s, &verifier, 2).unwrap() {
            LoopOutcome::Accepted { sample, .. } => *sample,
            LoopOutcome::Rejected { .. } => panic!("scripted to pass"),
        })
        .collect();

    // --- route: ten RAG records → 4 consistent / 3 inconsistent / 3 erroring.
    let records: Vec<RagIngestRecord> = (0..10)
        .map(|i| RagIngestRecord {
            doc: format!("Policy text {i}: waiting period is {} days.", 30 + i),
            question: format!("How long is waiting period {i}?"),
            answer: format!("{} days.", 30 + i),
            answerable: Some(true),
        })
        .collect();
    for (i, r) in records.iter().enumerate() {
        let msgs = validator_messages(&r.question, &r.answer, &r.doc);
        match i {
            0..=3 => backend.script_messages(&msgs, "CONSISTENT"),
            4..=6 => backend.script_messages(&msgs, "INCONSISTENT"),
            _ => backend.script_failing(&msgs, "unused", ALWAYS_FAIL),
        }
    }
    let routed: Vec<Sample> = route_rag_batch(&gateway, &records).into_iter().map(|(_, s)| s).collect();

    let corpus = SmokeCorpus { knowledge, mcq, sop, corrected, routed };
    let all: Vec<Sample> = corpus.all().into_iter().cloned().collect();
    assert_eq!(all.len(), 50, "smoke corpus is fifty samples");

    // --- persist the corpus and stratify it.
    let store = dir.join("corpus.jsonl");
    let manifest = DatasetManifest::create(&store).unwrap();
    let manifest = append_records(&manifest, &all).unwrap();
    manifest.verify().unwrap();
    let by_bucket = stratify(&manifest, StratifyKey::Bucket).unwrap();

    // --- schedule: derive bucket stats from the stored corpus.
    let read_back = read_samples(&manifest).unwrap();
    let count_where = |f: &dyn Fn(&Sample) -> bool| read_back.iter().filter(|s| f(s)).count();
    let ki = count_where(&|s| s.provenance.pipeline == Pipeline::KnowledgeInjection);
    let mcq_n = count_where(&|s| s.provenance.pipeline == Pipeline::CognitiveAlignment);
    let sop_n = count_where(&|s| s.provenance.pipeline == Pipeline::UnderwritingClaims);
    let fixed = count_where(&|s| s.provenance.pipeline == Pipeline::SelfDistill);
    let rag_gen = count_where(&|s| {
        s.provenance.pipeline == Pipeline::RagAdaptation && s.bucket == Bucket::Generation
    });
    let rag_ref = count_where(&|s| {
        s.provenance.pipeline == Pipeline::RagAdaptation && s.bucket == Bucket::Refusal
    });
    let stats = vec![
        BucketStats::new("rote_knowledge", BucketCategory::General, ki),
        BucketStats::new("alignment_mcq", BucketCategory::DomainSimple, mcq_n),
        BucketStats::new("underwriting_sop", BucketCategory::DomainComplex, sop_n),
        BucketStats::new("corrected_answers", BucketCategory::DomainComplex, fixed),
        BucketStats::new("rag_grounded", BucketCategory::HallucinationMitigation, rag_gen),
        BucketStats::new("rag_refusal", BucketCategory::LongTail, rag_ref),
    ];
    let targets = MixtureTargets { long_tail_threshold: 4, ..MixtureTargets::default() };
    let spec = stage2_mixture(&stats, &targets, 2.0).unwrap();
    let draws = sample_batch(&spec, &stats, 256, SEED).unwrap();

    // --- reward: score each corrected answer through the verifiable path.
    let reward_cfg = RewardConfig { l_min: 2, l_max: 40, ..RewardConfig::default() };
    let mut reward_ledger: Vec<u8> = Vec::new();
    for s in &corpus.corrected {
        let response = s.messages.last().unwrap().content.as_str();
        let outcome =
            verify_rule_based(&s.answer, &s.answer, PatternLibrary::builtin(), reward_cfg.numeric_tol);
        let penalties = compute_penalties(response, s.context.as_deref(), None, &reward_cfg);
        let tokens = alignkit_core::text::tokenize(response).len() as u32;
        let signal =
            composite_reward(RewardPath::Verifiable(&outcome), tokens, &penalties, &reward_cfg)
                .unwrap();
        reward_ledger.extend_from_slice(format!("{}\t", s.id).as_bytes());
        serde_json::to_writer(&mut reward_ledger, &signal).unwrap();
        reward_ledger.push(b'\n');
    }

    // --- eval: grade ten MCQ items, one needing judge escalation.
    let items: Vec<EvalItem> = corpus.mcq.iter().cloned().map(EvalItem::from_sample).collect();
    let mut responses: BTreeMap<String, String> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let id = item.sample.id.clone();
        let gold = item.sample.answer.clone();
        let text = match i {
            0..=7 => format!("<think>checked the clause</think>\nThe answer is {gold}."),
            8 => "<think>mixed up the rows</think>\nThe answer is Z.".to_string(),
            _ => "the middle option reads best".to_string(), // unparseable → judge
        };
        responses.insert(id, text);
    }
    let escalated = &items[9];
    let judge_msgs = gateway
        .equivalence_messages("the middle option reads best", &escalated.sample.answer);
    backend.script_messages(&judge_msgs, "DIFFERENT");
    let rows = run_eval_items(&gateway, &items, &responses);
    let report = report_from_rows("smoke-model", &rows);
    let table = render_table(std::slice::from_ref(&report));

    // --- bundle every artifact for bit-identity comparison.
    let mut artifacts: Vec<u8> = Vec::new();
    artifacts.extend_from_slice(&std::fs::read(&store).unwrap());
    for (bucket, ids) in &by_bucket {
        artifacts.extend_from_slice(format!("{bucket}: {}\n", ids.join(",")).as_bytes());
    }
    artifacts.extend_from_slice(serde_json::to_string(&spec).unwrap().as_bytes());
    artifacts.extend_from_slice(draws.join(",").as_bytes());
    artifacts.extend_from_slice(&reward_ledger);
    for row in &rows {
        serde_json::to_writer(&mut artifacts, row).unwrap();
        artifacts.push(b'\n');
    }
    artifacts.extend_from_slice(serde_json::to_string(&report).unwrap().as_bytes());
    artifacts.extend_from_slice(table.as_bytes());

    // Sanity inside the run: ledgers non-empty, report has scores.
    assert!(!rows.is_empty() && !reward_ledger.is_empty(), "ledgers must be non-empty");
    assert!(
        !report.dimension_scores.is_empty() && report.group_avgs.contains_key("overall"),
        "report must carry scores"
    );
    let scored = rows
        .iter()
        .filter(|r| matches!(r.outcome, LedgerOutcome::Scored { .. }))
        .count();
    assert_eq!(scored, 10, "all ten eval items must score");

    (corpus, artifacts)
}

#[test]
fn c09_end_to_end_smoke_offline_deterministic() {
    const NAME: &str = "end-to-end-smoke";
    let started = Instant::now();
    let dir1 = tempfile::tempdir().unwrap();
    let (_, first) = smoke_run(dir1.path());
    let dir2 = tempfile::tempdir().unwrap();
    let (_, second) = smoke_run(dir2.path());
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "[FAIL] {NAME}: two full runs took {elapsed:?}, budget 10s"
    );
    assert!(
        first == second,
        "[FAIL] {NAME}: rerun with the same seed and transcripts is not bit-identical"
    );
    pass(
        NAME,
        &format!(
            "50-sample corpus: synth → loops → route → schedule → reward → eval offline in {elapsed:?} \
             (budget 10s), artifacts bit-identical across reruns ({} bytes)",
            first.len()
        ),
    );
}

#[test]
fn c10_sample_format_conformance() {
    const NAME: &str = "format-conformance";
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = smoke_run(dir.path());

    let mut checked = 0usize;
    for sample in corpus.all() {
        let violations = validate_sample(sample);
        assert!(
            violations.is_empty(),
            "[FAIL] {NAME}: pipeline output {} violates schema: {violations:?}",
            sample.id
        );
        checked += 1;
    }
    // Atomic retrieval tasks conform too, including the unanswered ones.
    use alignkit_core::rag_adapt::{build_atomic_task, AtomicTaskKind};
    let doc = "The hospital cash rider pays 100 per day after a 3-day stay.";
    let atomics = vec![
        build_atomic_task(AtomicTaskKind::BoundaryId, doc, Some(("What is the dental copay?", "")), &[], 7)
            .unwrap(),
        build_atomic_task(
            AtomicTaskKind::KnowledgeSelection,
            doc,
            Some(("What does the rider pay?", "100 per day")),
            &["Unrelated passage about enrollment windows.".to_string()],
            7,
        )
        .unwrap(),
        build_atomic_task(AtomicTaskKind::Summarization, doc, Some(("", "Pays 100/day after 3 days.")), &[], 7)
            .unwrap(),
        build_atomic_task(AtomicTaskKind::SelfCheck, doc, Some(("", "The rider pays 500 per day.")), &[], 7)
            .unwrap(),
    ];
    for sample in &atomics {
        let violations = validate_sample(sample);
        assert!(
            violations.is_empty(),
            "[FAIL] {NAME}: atomic task {} violates schema: {violations:?}",
            sample.id
        );
        checked += 1;
    }

    // Knowledge-injection outputs all begin with the literal empty think tag.
    for sample in &corpus.knowledge {
        let assistant = &sample.messages.last().unwrap().content;
        assert!(
            assistant.starts_with("<think></think>"),
            "[FAIL] {NAME}: knowledge sample {} does not start with <think></think>: {assistant:?}",
            sample.id
        );
        assert_eq!(
            assistant,
            &assistant_content(None, &sample.answer),
            "[FAIL] {NAME}: knowledge sample {} assistant turn is not canonical",
            sample.id
        );
    }
    pass(
        NAME,
        &format!(
            "{checked} pipeline outputs pass validate_sample; all {} knowledge-injection outputs \
             begin with <think></think>",
            corpus.knowledge.len()
        ),
    );
}

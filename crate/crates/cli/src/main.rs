//! `alignkit` — command-line front end over the alignment-pipeline toolkit.
//!
//! Every subcommand that talks to a model takes either `--mock <transcript>`
//! (a scripted JSONL transcript, fully offline) or `--endpoint <config>`
//! (TOML connection settings for an OpenAI-compatible server). File inputs
//! and outputs are JSONL unless noted; summaries go to stdout as JSON so
//! they can be piped.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use alignkit_core::curriculum::{
    sample_batch, stage1_mixture, stage2_mixture, BucketStats, MixtureSpec, MixtureTargets, Stage,
};
use alignkit_core::datamodel::{validate_sample, Bucket, Sample};
use alignkit_core::evaluation::{
    read_ledger, read_responses, report_from_rows, render_table, run_eval_items, write_ledger,
    EvalItem,
};
use alignkit_core::gateway::mock::MockBackend;
use alignkit_core::gateway::{EndpointConfig, ModelGateway};
use alignkit_core::loops::{
    batch_yield, parse_think_answer, run_answer_loops, run_prompt_loop, ExactMatchScorer,
    LoopOutcome, RuleVerifier, ValidationCase,
};
use alignkit_core::rag_adapt::{parse_ingest_jsonl, route_rag_batch};
use alignkit_core::rewards::{
    composite_reward, compute_penalties, verify_rule_based, MatchKind, PatternLibrary,
    RewardConfig, RewardPath, RewardSignal, Verdict,
};
use alignkit_core::text::tokenize;

#[derive(Parser)]
#[command(name = "alignkit", version = alignkit_core::VERSION)]
#[command(about = "Alignment data pipeline toolkit: loops, routing, mixtures, rewards, eval")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Self-correction loops over answers and prompts
    #[command(subcommand)]
    Loop(LoopCommands),
    /// Route RAG QA records into generation / refusal / quarantine buckets
    Route(RouteArgs),
    /// Compute curriculum mixture weights from bucket statistics
    Schedule(ScheduleArgs),
    /// Reward scoring over model responses
    #[command(subcommand)]
    Reward(RewardCommands),
    /// Evaluation harness: scoring runs and report rendering
    #[command(subcommand)]
    Eval(EvalCommands),
}

#[derive(Subcommand)]
enum LoopCommands {
    /// Generate-verify-reflect-rewrite each dataset sample until it passes
    Answers(LoopAnswersArgs),
    /// Refine a prompt against a validation set from its error digest
    Prompt(LoopPromptArgs),
}

#[derive(Subcommand)]
enum RewardCommands {
    /// Score responses against gold samples, emitting reward decompositions
    Score(RewardScoreArgs),
}

#[derive(Subcommand)]
enum EvalCommands {
    /// Score a dataset's responses and write a report (and optional ledger)
    Run(EvalRunArgs),
    /// Re-aggregate a saved ledger into a table or JSON report
    Report(EvalReportArgs),
}

/// Gateway selection: exactly one of a scripted transcript or a live
/// endpoint config.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct GatewayArgs {
    /// Scripted transcript (JSONL of {request_hash, response_content,
    /// fail_times}) backing the gateway offline
    #[arg(long, value_name = "TRANSCRIPT")]
    mock: Option<PathBuf>,
    /// TOML connection settings for an OpenAI-compatible endpoint
    #[arg(long, value_name = "CONFIG")]
    endpoint: Option<PathBuf>,
}

impl GatewayArgs {
    fn build(&self) -> Result<ModelGateway> {
        match (&self.mock, &self.endpoint) {
            (Some(transcript), None) => {
                let backend = MockBackend::from_file(transcript)
                    .with_context(|| format!("loading transcript {}", transcript.display()))?;
                // Offline transcripts are deterministic; waiting between
                // retries would only slow replay down.
                let cfg = EndpointConfig { backoff_base_ms: 0, ..EndpointConfig::default() };
                Ok(ModelGateway::new(cfg, Arc::new(backend))?)
            }
            (None, Some(config)) => {
                let cfg = EndpointConfig::from_file(config)?;
                Ok(ModelGateway::over_http(cfg)?)
            }
            // clap's group(required, !multiple) rules both arms out.
            _ => unreachable!("gateway argument group enforces exactly one source"),
        }
    }
}

#[derive(Args)]
struct LoopAnswersArgs {
    /// Dataset of prompt-bearing samples (JSONL)
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,
    /// Maximum rewrite iterations per sample
    #[arg(long, value_name = "N", default_value_t = 3)]
    max_iters: u32,
    #[command(flatten)]
    gateway: GatewayArgs,
    /// Where to write accepted samples (JSONL); omit to only report yield
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Where to write per-sample loop traces (JSONL)
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Relative tolerance for numeric answer comparison
    #[arg(long, value_name = "TOL", default_value_t = 1e-6)]
    numeric_tol: f64,
}

#[derive(Args)]
struct LoopPromptArgs {
    /// File containing the initial prompt text
    #[arg(long, value_name = "FILE")]
    initial: PathBuf,
    /// Validation cases (JSONL of {id, input, gold})
    #[arg(long, value_name = "PATH")]
    validation: PathBuf,
    /// Maximum refinement rounds after the initial evaluation
    #[arg(long, value_name = "N")]
    rounds: u32,
    #[command(flatten)]
    gateway: GatewayArgs,
    /// Where to write the best prompt text; omit to only print the state
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RouteArgs {
    /// RAG ingest records (JSONL of {doc, question, answer})
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Where consistency-validated samples land (JSONL)
    #[arg(long, value_name = "PATH")]
    out_generation: PathBuf,
    /// Where contradicted samples land, answers swapped for refusals (JSONL)
    #[arg(long, value_name = "PATH")]
    out_refusal: PathBuf,
    /// Where validator-failure samples land; omitted means they are only
    /// recorded in the decision ledger
    #[arg(long, value_name = "PATH")]
    out_quarantine: Option<PathBuf>,
    /// Where to write the full routing-decision ledger (JSONL)
    #[arg(long, value_name = "PATH")]
    decisions: Option<PathBuf>,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Bucket statistics (JSON array of {bucket_id, category, count})
    #[arg(long, value_name = "PATH")]
    stats: PathBuf,
    /// Training stage the mixture is for
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    /// Long-tail multiplier (stage 2 only)
    #[arg(long, value_name = "FACTOR", default_value_t = 1.0)]
    boost: f64,
    /// Mixture targets (TOML); defaults apply when omitted
    #[arg(long, value_name = "CONFIG")]
    targets: Option<PathBuf>,
    /// Where to write the mixture file (JSON)
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Also draw this many bucket samples from the mixture (seeded by
    /// --seed) and report the empirical frequencies as a sanity check
    #[arg(long, value_name = "N")]
    check_draws: Option<usize>,
    /// Seed for --check-draws
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RewardScoreArgs {
    /// Model responses (JSONL of {id, response})
    #[arg(long, value_name = "PATH")]
    responses: PathBuf,
    /// Gold samples the responses answer (JSONL)
    #[arg(long, value_name = "PATH")]
    gold: PathBuf,
    /// Reward settings (TOML); defaults apply when omitted
    #[arg(long, value_name = "CONFIG")]
    config: Option<PathBuf>,
    /// Where to write reward rows (JSONL)
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalRunArgs {
    /// Evaluation samples (JSONL)
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,
    /// Model responses (JSONL of {id, response})
    #[arg(long, value_name = "PATH")]
    responses: PathBuf,
    #[command(flatten)]
    gateway: GatewayArgs,
    /// Where to write the report (JSON)
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Where to write the scoring ledger (JSONL)
    #[arg(long, value_name = "PATH")]
    ledger: Option<PathBuf>,
    /// Model id stamped on the report
    #[arg(long, value_name = "ID", default_value = "model")]
    model: String,
}

#[derive(Args)]
struct EvalReportArgs {
    /// Scoring ledger to re-aggregate (JSONL)
    #[arg(long, value_name = "PATH")]
    ledger: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
    /// Model id stamped on the report
    #[arg(long, value_name = "ID", default_value = "model")]
    model: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Json,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Commands::Loop(LoopCommands::Answers(args)) => loop_answers(args),
        Commands::Loop(LoopCommands::Prompt(args)) => loop_prompt(args),
        Commands::Route(args) => route(args),
        Commands::Schedule(args) => schedule(args),
        Commands::Reward(RewardCommands::Score(args)) => reward_score(args),
        Commands::Eval(EvalCommands::Run(args)) => eval_run(args),
        Commands::Eval(EvalCommands::Report(args)) => eval_report(args),
    }
}

// ---------------------------------------------------------------------------
// Shared I/O helpers
// ---------------------------------------------------------------------------

/// Reads a JSONL file of samples, reporting the first bad line by number.
fn read_samples_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad sample", path.display(), i + 1))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Writes one JSON object per line.
fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file =
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// loop answers
// ---------------------------------------------------------------------------

fn loop_answers(args: LoopAnswersArgs) -> Result<()> {
    let samples = read_samples_jsonl(&args.dataset)?;
    if samples.is_empty() {
        bail!("{}: no samples", args.dataset.display());
    }
    let gateway = args.gateway.build()?;
    let verifier = RuleVerifier::new(args.numeric_tol);
    let results = run_answer_loops(&gateway, &samples, &verifier, args.max_iters);

    let mut accepted = Vec::new();
    let mut trace_bytes = Vec::new();
    let mut errors = Vec::new();
    for result in &results {
        match result {
            Ok(outcome) => {
                outcome.trace().append_jsonl(&mut trace_bytes);
                if let LoopOutcome::Accepted { sample, .. } = outcome {
                    accepted.push((**sample).clone());
                }
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if let Some(out) = &args.out {
        write_jsonl(out, &accepted)?;
    }
    if let Some(trace) = &args.trace {
        fs::write(trace, &trace_bytes).with_context(|| format!("writing {}", trace.display()))?;
    }

    let summary = batch_yield(&results);
    for e in &errors {
        eprintln!("loop error: {e}");
    }
    print_json(&summary)
}

// ---------------------------------------------------------------------------
// loop prompt
// ---------------------------------------------------------------------------

fn loop_prompt(args: LoopPromptArgs) -> Result<()> {
    let initial = fs::read_to_string(&args.initial)
        .with_context(|| format!("reading {}", args.initial.display()))?;
    let text = fs::read_to_string(&args.validation)
        .with_context(|| format!("reading {}", args.validation.display()))?;
    let mut validation = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: ValidationCase = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad validation case", args.validation.display(), i + 1))?;
        validation.push(case);
    }

    let gateway = args.gateway.build()?;
    let state =
        run_prompt_loop(&gateway, initial.trim_end(), &validation, &ExactMatchScorer, args.rounds)?;
    if let Some(out) = &args.out {
        fs::write(out, &state.best.prompt).with_context(|| format!("writing {}", out.display()))?;
    }
    print_json(&state)
}

// ---------------------------------------------------------------------------
// route
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RouteSummary {
    total: usize,
    generation: usize,
    refusal: usize,
    quarantine: usize,
}

fn route(args: RouteArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let records = parse_ingest_jsonl(&text)
        .map_err(|e| anyhow::anyhow!("{}: {e}", args.input.display()))?;
    if records.is_empty() {
        bail!("{}: no records", args.input.display());
    }

    let gateway = args.gateway.build()?;
    let routed = route_rag_batch(&gateway, &records);

    let mut generation = Vec::new();
    let mut refusal = Vec::new();
    let mut quarantine = Vec::new();
    let mut decisions = Vec::new();
    for (decision, sample) in routed {
        match decision.bucket {
            Bucket::Generation => generation.push(sample),
            Bucket::Refusal => refusal.push(sample),
            _ => quarantine.push(sample),
        }
        decisions.push(decision);
    }

    write_jsonl(&args.out_generation, &generation)?;
    write_jsonl(&args.out_refusal, &refusal)?;
    if let Some(path) = &args.out_quarantine {
        write_jsonl(path, &quarantine)?;
    }
    if let Some(path) = &args.decisions {
        write_jsonl(path, &decisions)?;
    }

    print_json(&RouteSummary {
        total: records.len(),
        generation: generation.len(),
        refusal: refusal.len(),
        quarantine: quarantine.len(),
    })
}

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

/// On-disk mixture format: the weights as an explicit list plus the
/// constraint-check report.
#[derive(Serialize)]
struct MixtureFile {
    stage: Stage,
    weights: Vec<WeightEntry>,
    constraints_satisfied: Vec<String>,
}

#[derive(Serialize)]
struct WeightEntry {
    bucket_id: String,
    weight: f64,
}

fn mixture_file(spec: &MixtureSpec) -> MixtureFile {
    MixtureFile {
        stage: spec.stage,
        weights: spec
            .weights
            .iter()
            .map(|(bucket_id, weight)| WeightEntry { bucket_id: bucket_id.clone(), weight: *weight })
            .collect(),
        constraints_satisfied: spec.constraints_satisfied.clone(),
    }
}

fn schedule(args: ScheduleArgs) -> Result<()> {
    let text = fs::read_to_string(&args.stats)
        .with_context(|| format!("reading {}", args.stats.display()))?;
    let stats: Vec<BucketStats> =
        serde_json::from_str(&text).with_context(|| format!("{}: bad stats", args.stats.display()))?;
    let targets = match &args.targets {
        Some(path) => MixtureTargets::from_file(
            path.to_str().context("targets path is not valid UTF-8")?,
        )?,
        None => MixtureTargets::default(),
    };

    let spec = match args.stage {
        1 => stage1_mixture(&stats, &targets)?,
        _ => stage2_mixture(&stats, &targets, args.boost)?,
    };

    let file = mixture_file(&spec);
    let json = serde_json::to_string_pretty(&file)?;
    fs::write(&args.out, format!("{json}\n"))
        .with_context(|| format!("writing {}", args.out.display()))?;

    for constraint in &spec.constraints_satisfied {
        println!("ok: {constraint}");
    }
    if let Some(n) = args.check_draws {
        let draws = sample_batch(&spec, &stats, n, args.seed)?;
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for d in &draws {
            *freq.entry(d.as_str()).or_default() += 1;
        }
        for (bucket, count) in freq {
            println!(
                "draw: {bucket} {count}/{n} ({:.4} vs weight {:.4})",
                count as f64 / n as f64,
                spec.weights.get(bucket).copied().unwrap_or(0.0)
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reward score
// ---------------------------------------------------------------------------

/// One scored response: the verification verdict plus the full reward
/// decomposition.
#[derive(Serialize)]
struct RewardRow {
    id: String,
    verdict: Verdict,
    match_kind: MatchKind,
    #[serde(flatten)]
    signal: RewardSignal,
}

fn reward_score(args: RewardScoreArgs) -> Result<()> {
    let gold = read_samples_jsonl(&args.gold)?;
    let by_id: BTreeMap<&str, &Sample> = gold.iter().map(|s| (s.id.as_str(), s)).collect();
    let responses = read_responses(&args.responses)?;
    let cfg: RewardConfig = match &args.config {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&raw).with_context(|| format!("{}: bad config", path.display()))?
        }
        None => RewardConfig::default(),
    };
    cfg.validate()?;
    let patterns = PatternLibrary::builtin();

    let mut rows = Vec::new();
    for (id, response) in &responses {
        let sample = by_id
            .get(id.as_str())
            .with_context(|| format!("response {id} has no gold sample"))?;
        let (_think, answer) = parse_think_answer(response);
        let outcome = verify_rule_based(&answer, &sample.answer, patterns, cfg.numeric_tol);
        let penalties = compute_penalties(response, sample.context.as_deref(), None, &cfg);
        let length = tokenize(response).len() as u32;
        let signal =
            composite_reward(RewardPath::Verifiable(&outcome), length, &penalties, &cfg)?;
        rows.push(RewardRow {
            id: id.clone(),
            verdict: outcome.verdict,
            match_kind: outcome.match_kind,
            signal,
        });
    }
    write_jsonl(&args.out, &rows)?;
    println!("scored {} responses -> {}", rows.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval run / eval report
// ---------------------------------------------------------------------------

fn eval_run(args: EvalRunArgs) -> Result<()> {
    let samples = read_samples_jsonl(&args.dataset)?;
    if samples.is_empty() {
        bail!("{}: no samples", args.dataset.display());
    }
    let mut items = Vec::new();
    for sample in samples {
        let violations = validate_sample(&sample);
        if !violations.is_empty() {
            bail!("sample {} fails validation: {:?}", sample.id, violations);
        }
        let item = EvalItem::from_sample(sample);
        item.validate()?;
        items.push(item);
    }
    let responses = read_responses(&args.responses)?;
    let gateway = args.gateway.build()?;

    let rows = run_eval_items(&gateway, &items, &responses);
    if let Some(path) = &args.ledger {
        write_ledger(path, &rows)?;
    }
    let report = report_from_rows(&args.model, &rows);
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&args.out, format!("{json}\n"))
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("{}", render_table(std::slice::from_ref(&report)));
    Ok(())
}

fn eval_report(args: EvalReportArgs) -> Result<()> {
    let rows = read_ledger(&args.ledger)?;
    let report = report_from_rows(&args.model, &rows);
    match args.format {
        ReportFormat::Table => println!("{}", render_table(std::slice::from_ref(&report))),
        ReportFormat::Json => print_json(&report)?,
    }
    Ok(())
}

//! alignkit: an offline-testable toolkit for building LLM alignment data
//! pipelines in vertical domains.
//!
//! The crate covers the full data path used to specialize a general model:
//!
//! * [`datamodel`] — the canonical sample schema, JSONL persistence with
//!   manifests, validation, and stratification;
//! * [`gateway`] — the single mockable entry point for every model call,
//!   with retry policy, a concurrency cap, and judge operations;
//! * [`synthesis`] — verifiable data construction (knowledge injection,
//!   perturbation-based multiple choice, SOP chain-of-thought) and the
//!   reasoning-trace linter;
//! * [`loops`] — self-correction loops over answers and prompts;
//! * [`rag_adapt`] — atomic retrieval-skill tasks and consistency-based
//!   routing of samples into generation/refusal/quarantine buckets;
//! * [`curriculum`] — mixture weights, batch sampling, screening, and tier
//!   sequencing for staged training;
//! * [`rewards`] — rule-based verification with judge escalation, text
//!   penalties, composite rewards, and group-relative advantages;
//! * [`evaluation`] — the offline eval harness producing per-dimension
//!   reports and replayable ledgers.
//!
//! Every model interaction goes through [`gateway::ModelGateway`], which is
//! backed either by an HTTP endpoint or by a scripted transcript
//! ([`gateway::mock::MockBackend`]); the whole pipeline runs offline and
//! deterministically under the mock.

pub mod curriculum;
pub mod datamodel;
pub mod evaluation;
pub mod gateway;
pub mod loops;
pub mod rag_adapt;
pub mod rewards;
pub mod synthesis;
pub mod text;

/// Crate version, re-exported for bindings and CLIs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

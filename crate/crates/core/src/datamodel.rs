//! Canonical sample schema, dataset persistence, and validation.
//!
//! Every pipeline stage reads and writes the same [`Sample`] record, stored
//! one JSON object per line. A dataset file carries a `.manifest` sidecar
//! with bucket/area counts and a checksum so downstream stages can verify
//! integrity without re-reading the corpus.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Marker that must prefix the answer of every refusal-bucket sample.
pub const REFUSAL_MARKER: &str = "[REFUSE]";

/// Business areas of the insurance domain taxonomy. Serialized by their
/// three-letter codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BusinessArea {
    /// Insurance domain knowledge.
    IDK,
    /// Insurance marketing.
    IMI,
    /// Insurance underwriting compliance.
    IUC,
    /// Insurance logical reasoning.
    ILR,
    /// Insurance tool use.
    ITU,
    /// Insurance product explanation.
    IPE,
    /// Insurance safety and compliance.
    ISC,
    /// Insurance service summary.
    IMG,
    /// Insurance sales dialogue.
    ISD,
}

impl BusinessArea {
    /// All areas in canonical report order.
    pub const ALL: [BusinessArea; 9] = [
        BusinessArea::IDK,
        BusinessArea::IMI,
        BusinessArea::IUC,
        BusinessArea::ILR,
        BusinessArea::ITU,
        BusinessArea::IPE,
        BusinessArea::ISC,
        BusinessArea::IMG,
        BusinessArea::ISD,
    ];

    /// Three-letter code used in serialized records and report headers.
    pub fn code(&self) -> &'static str {
        match self {
            BusinessArea::IDK => "IDK",
            BusinessArea::IMI => "IMI",
            BusinessArea::IUC => "IUC",
            BusinessArea::ILR => "ILR",
            BusinessArea::ITU => "ITU",
            BusinessArea::IPE => "IPE",
            BusinessArea::ISC => "ISC",
            BusinessArea::IMG => "IMG",
            BusinessArea::ISD => "ISD",
        }
    }

    /// Parses a three-letter code.
    pub fn from_code(code: &str) -> Option<BusinessArea> {
        BusinessArea::ALL.iter().copied().find(|a| a.code() == code)
    }
}

impl std::fmt::Display for BusinessArea {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Task presentation format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    MultipleChoice,
    Extraction,
    OpenEnded,
    Dialogue,
}

impl SampleFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleFormat::MultipleChoice => "multiple_choice",
            SampleFormat::Extraction => "extraction",
            SampleFormat::OpenEnded => "open_ended",
            SampleFormat::Dialogue => "dialogue",
        }
    }
}

/// Two-level difficulty grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Simple,
    Complex,
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Complex => "complex",
        }
    }
}

/// Routing bucket a sample currently sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Generation,
    Refusal,
    Quarantine,
    Unassigned,
}

impl Bucket {
    pub fn as_str(&self) -> &'static str {
        match self {
            Bucket::Generation => "generation",
            Bucket::Refusal => "refusal",
            Bucket::Quarantine => "quarantine",
            Bucket::Unassigned => "unassigned",
        }
    }
}

/// Pipeline that produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    KnowledgeInjection,
    CognitiveAlignment,
    Actuarial,
    UnderwritingClaims,
    AtomicRag,
    RagAdaptation,
    SelfDistill,
    External,
}

/// Verdict recorded by the consistency validator during RAG routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidatorVerdict {
    Consistent,
    Inconsistent,
    Error,
}

/// Chat role of a message turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Message {
        Message { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Message {
        Message { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Message {
        Message { role: Role::Assistant, content: content.into() }
    }
}

/// Where a sample came from and how it got here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Free-form origin label (document id, corpus name, upstream system).
    pub source: String,
    pub pipeline: Pipeline,
    /// Self-correction iteration that produced the accepted answer; 0 for
    /// first-pass material.
    pub iteration: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validator_verdict: Option<ValidatorVerdict>,
}

/// One training or evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// Fine-grained task label inside the business area (the cognition axis
    /// of the taxonomy); free-form string, e.g. `"premium_calculation"`.
    pub task_type: String,
    pub business_area: BusinessArea,
    pub format: SampleFormat,
    pub difficulty: Difficulty,
    pub messages: Vec<Message>,
    /// Reasoning channel; `None` when the sample carries no reasoning trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think: Option<String>,
    /// Final answer text; empty string while the sample is unanswered.
    pub answer: String,
    /// Retrieval evidence attached to the sample, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub bucket: Bucket,
    pub provenance: Provenance,
}

/// Renders the canonical assistant turn for a completed sample: the reasoning
/// channel in `<think>` tags (empty tags when there is none) followed by a
/// newline and the answer.
pub fn assistant_content(think: Option<&str>, answer: &str) -> String {
    format!("<think>{}</think>\n{}", think.unwrap_or(""), answer)
}

/// A single schema violation found by [`validate_sample`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Short stable code, e.g. `"empty id"` or `"refusal marker missing"`.
    pub code: String,
    pub detail: String,
}

impl Violation {
    fn new(code: &str, detail: impl Into<String>) -> Violation {
        Violation { code: code.to_string(), detail: detail.into() }
    }
}

/// Checks every schema invariant and returns all violations (empty when the
/// sample is well-formed). Never short-circuits: callers get the full list.
pub fn validate_sample(sample: &Sample) -> Vec<Violation> {
    let mut out = Vec::new();
    if sample.id.is_empty() {
        out.push(Violation::new("empty id", "sample id must be non-empty"));
    }
    if sample.task_type.is_empty() {
        out.push(Violation::new("empty task_type", "task_type must be non-empty"));
    }
    match sample.messages.last() {
        None => out.push(Violation::new("empty messages", "messages must contain at least one turn")),
        Some(last) => {
            if sample.answer.is_empty() {
                if last.role != Role::User {
                    out.push(Violation::new(
                        "final turn not user",
                        "unanswered samples must end with a user turn",
                    ));
                }
            } else if last.role != Role::Assistant {
                out.push(Violation::new(
                    "final turn not assistant",
                    "completed samples must end with an assistant turn",
                ));
            }
        }
    }
    if sample.bucket == Bucket::Refusal && !sample.answer.starts_with(REFUSAL_MARKER) {
        out.push(Violation::new(
            "refusal marker missing",
            format!("refusal-bucket answers must start with {REFUSAL_MARKER}"),
        ));
    }
    out
}

/// Axis on which [`stratify`] groups a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratifyKey {
    BusinessArea,
    Format,
    Difficulty,
    Bucket,
    TaskType,
}

/// Errors from dataset persistence and validation.
#[derive(Debug, Error)]
pub enum DataError {
    /// One or more records failed validation or collided on id; nothing was
    /// written.
    #[error("invalid records, nothing written: {}", ids.join(", "))]
    InvalidRecord { ids: Vec<String> },
    #[error("storage failure at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line} of {path}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest checksum mismatch for {path}: expected {expected}, found {found}")]
    ChecksumMismatch { path: PathBuf, expected: String, found: String },
}

impl DataError {
    fn storage(path: &Path, source: std::io::Error) -> DataError {
        DataError::Storage { path: path.to_path_buf(), source }
    }
}

/// Sidecar metadata for a dataset file. The manifest is the handle every
/// dataset operation takes; it is rewritten atomically after each append.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Path of the JSONL dataset file this manifest describes.
    pub path: PathBuf,
    /// Total number of records in the file.
    pub total: u64,
    pub bucket_counts: BTreeMap<Bucket, u64>,
    pub area_counts: BTreeMap<BusinessArea, u64>,
    /// Hex SHA-256 of the dataset file contents.
    pub checksum: String,
}

fn manifest_path(dataset: &Path) -> PathBuf {
    let mut os = dataset.as_os_str().to_owned();
    os.push(".manifest");
    PathBuf::from(os)
}

fn file_checksum(path: &Path) -> Result<String, DataError> {
    let mut f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(hex::encode(Sha256::digest(b"")));
        }
        Err(e) => return Err(DataError::storage(path, e)),
    };
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| DataError::storage(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

impl DatasetManifest {
    /// Creates a manifest for an empty (possibly not-yet-existing) dataset.
    pub fn create(path: impl Into<PathBuf>) -> Result<DatasetManifest, DataError> {
        let path = path.into();
        let m = DatasetManifest {
            checksum: file_checksum(&path)?,
            path,
            total: 0,
            bucket_counts: BTreeMap::new(),
            area_counts: BTreeMap::new(),
        };
        m.write_sidecar()?;
        Ok(m)
    }

    /// Loads the `.manifest` sidecar for `path`; if none exists, scans the
    /// dataset file and synthesizes one.
    pub fn open(path: impl Into<PathBuf>) -> Result<DatasetManifest, DataError> {
        let path = path.into();
        let side = manifest_path(&path);
        if side.exists() {
            let raw = std::fs::read_to_string(&side).map_err(|e| DataError::storage(&side, e))?;
            let m: DatasetManifest =
                serde_json::from_str(&raw).map_err(|e| DataError::Parse { path: side, line: 1, source: e })?;
            return Ok(m);
        }
        Self::rebuild(path)
    }

    /// Recomputes counts and checksum by scanning the dataset file.
    pub fn rebuild(path: impl Into<PathBuf>) -> Result<DatasetManifest, DataError> {
        let path = path.into();
        let samples = if path.exists() { read_samples_at(&path)? } else { Vec::new() };
        let mut m = DatasetManifest {
            checksum: file_checksum(&path)?,
            path,
            total: samples.len() as u64,
            bucket_counts: BTreeMap::new(),
            area_counts: BTreeMap::new(),
        };
        for s in &samples {
            *m.bucket_counts.entry(s.bucket).or_insert(0) += 1;
            *m.area_counts.entry(s.business_area).or_insert(0) += 1;
        }
        m.write_sidecar()?;
        Ok(m)
    }

    /// Verifies the recorded checksum against the file on disk.
    pub fn verify(&self) -> Result<(), DataError> {
        let found = file_checksum(&self.path)?;
        if found != self.checksum {
            return Err(DataError::ChecksumMismatch {
                path: self.path.clone(),
                expected: self.checksum.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Writes the sidecar atomically (temp file + rename).
    fn write_sidecar(&self) -> Result<(), DataError> {
        let side = manifest_path(&self.path);
        let tmp = side.with_extension("manifest.tmp");
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&tmp, body).map_err(|e| DataError::storage(&tmp, e))?;
        std::fs::rename(&tmp, &side).map_err(|e| DataError::storage(&side, e))?;
        Ok(())
    }
}

fn read_samples_at(path: &Path) -> Result<Vec<Sample>, DataError> {
    let f = File::open(path).map_err(|e| DataError::storage(path, e))?;
    // Shared lock: appends take an exclusive lock, so a read never observes a
    // half-written batch.
    f.lock_shared().map_err(|e| DataError::storage(path, e))?;
    let reader = BufReader::new(&f);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source: e,
        })?;
        out.push(s);
    }
    let _ = f.unlock();
    Ok(out)
}

/// Reads every record of the dataset described by `manifest`.
pub fn read_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>, DataError> {
    if !manifest.path.exists() {
        return Ok(Vec::new());
    }
    read_samples_at(&manifest.path)
}

/// Appends `records` to the dataset, all-or-nothing.
///
/// Every record is validated first and ids are checked for uniqueness both
/// within the batch and against the existing file; any failure leaves the
/// file untouched and reports the offending ids. Writers serialize through an
/// exclusive advisory lock on the dataset file. Returns the updated manifest
/// (the sidecar is rewritten atomically).
pub fn append_records(
    manifest: &DatasetManifest,
    records: &[Sample],
) -> Result<DatasetManifest, DataError> {
    let mut bad: Vec<String> = Vec::new();
    for r in records {
        if !validate_sample(r).is_empty() {
            bad.push(r.id.clone());
        }
    }
    let mut seen: HashSet<&str> = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            bad.push(r.id.clone());
        }
    }
    let existing = read_samples(manifest)?;
    let existing_ids: HashSet<&str> = existing.iter().map(|s| s.id.as_str()).collect();
    for r in records {
        if existing_ids.contains(r.id.as_str()) {
            bad.push(r.id.clone());
        }
    }
    if !bad.is_empty() {
        bad.sort();
        bad.dedup();
        return Err(DataError::InvalidRecord { ids: bad });
    }

    let path = &manifest.path;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DataError::storage(path, e))?;
    f.lock().map_err(|e| DataError::storage(path, e))?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("sample serializes");
        buf.push(b'\n');
    }
    // One buffered write per batch keeps the append all-or-nothing in
    // practice; validation above already rules out partial batches by
    // construction.
    f.write_all(&buf).map_err(|e| DataError::storage(path, e))?;
    f.flush().map_err(|e| DataError::storage(path, e))?;
    let _ = f.unlock();
    drop(f);

    let mut next = manifest.clone();
    next.total += records.len() as u64;
    for r in records {
        *next.bucket_counts.entry(r.bucket).or_insert(0) += 1;
        *next.area_counts.entry(r.business_area).or_insert(0) += 1;
    }
    next.checksum = file_checksum(path)?;
    next.write_sidecar()?;
    Ok(next)
}

/// Groups sample ids by the requested axis. Keys are the serialized labels
/// (area codes, snake_case enum names, or raw `task_type` strings); ids keep
/// file order within each group.
pub fn stratify(
    manifest: &DatasetManifest,
    key: StratifyKey,
) -> Result<BTreeMap<String, Vec<String>>, DataError> {
    let samples = read_samples(manifest)?;
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in samples {
        let label = match key {
            StratifyKey::BusinessArea => s.business_area.code().to_string(),
            StratifyKey::Format => s.format.as_str().to_string(),
            StratifyKey::Difficulty => s.difficulty.as_str().to_string(),
            StratifyKey::Bucket => s.bucket.as_str().to_string(),
            StratifyKey::TaskType => s.task_type.clone(),
        };
        out.entry(label).or_default().push(s.id);
    }
    Ok(out)
}

//! Scripted offline backend.
//!
//! The mock keys responses by a stable hash of the request's messages
//! ([`super::request_hash`]), so a transcript file records exactly which
//! requests a pipeline run is allowed to make. Entries can be scripted to
//! fail a number of times first, which is how retry behavior is exercised
//! offline. The backend also instruments call counts and the peak number of
//! concurrent requests it observed.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{request_hash, BackendFailure, ChatBackend, GatewayError, WireRequestOwned};
use crate::datamodel::Message;

/// `fail_times` value meaning "fail every attempt, forever".
pub const ALWAYS_FAIL: u32 = u32::MAX;

/// One line of a transcript fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// Hex hash of the request messages, from [`super::request_hash`].
    pub request_hash: String,
    pub response_content: String,
    /// Number of scripted 500s to serve before succeeding; [`ALWAYS_FAIL`]
    /// never succeeds.
    #[serde(default)]
    pub fail_times: u32,
}

#[derive(Debug)]
struct Script {
    response: String,
    remaining_failures: u32,
}

/// Offline [`ChatBackend`] with scripted responses and instrumentation.
#[derive(Debug, Default)]
pub struct MockBackend {
    scripts: Mutex<HashMap<String, Script>>,
    latency: Option<Duration>,
    calls: AtomicU64,
    in_flight: AtomicU64,
    max_in_flight: AtomicU64,
    bodies: Mutex<Vec<Vec<u8>>>,
}

struct InFlightGuard<'a>(&'a MockBackend);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl MockBackend {
    pub fn new() -> MockBackend {
        MockBackend::default()
    }

    /// Adds an artificial per-call delay so concurrency tests can observe
    /// overlapping requests.
    pub fn with_latency(mut self, latency: Duration) -> MockBackend {
        self.latency = Some(latency);
        self
    }

    /// Loads a JSONL transcript fixture.
    pub fn from_file(path: &Path) -> Result<MockBackend, GatewayError> {
        let f = std::fs::File::open(path).map_err(|e| {
            GatewayError::InvalidConfig(format!("cannot read transcript {}: {e}", path.display()))
        })?;
        let backend = MockBackend::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| {
                GatewayError::InvalidConfig(format!("transcript {} read failed: {e}", path.display()))
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::InvalidConfig(format!(
                    "transcript {} line {} malformed: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            backend.script_entry(entry);
        }
        Ok(backend)
    }

    /// Writes entries as a JSONL transcript fixture.
    pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> Result<(), GatewayError> {
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e).expect("entry serializes");
            buf.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| {
            GatewayError::InvalidConfig(format!("cannot write transcript {}: {e}", path.display()))
        })?;
        f.write_all(&buf).map_err(|e| {
            GatewayError::InvalidConfig(format!("cannot write transcript {}: {e}", path.display()))
        })?;
        Ok(())
    }

    pub fn script_entry(&self, entry: TranscriptEntry) {
        self.scripts.lock().expect("scripts lock").insert(
            entry.request_hash,
            Script { response: entry.response_content, remaining_failures: entry.fail_times },
        );
    }

    /// Scripts a successful response for the request carrying `messages`.
    pub fn script_messages(&self, messages: &[Message], response: &str) {
        self.script_failing(messages, response, 0);
    }

    /// Scripts a response preceded by `fail_times` scripted 500s.
    pub fn script_failing(&self, messages: &[Message], response: &str, fail_times: u32) {
        self.script_entry(TranscriptEntry {
            request_hash: request_hash(messages),
            response_content: response.to_string(),
            fail_times,
        });
    }

    /// Total calls that reached the backend (including failed attempts).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Peak number of concurrent in-flight calls observed.
    pub fn max_in_flight_seen(&self) -> u64 {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Raw request bodies in arrival order, for byte-identity assertions.
    pub fn bodies(&self) -> Vec<Vec<u8>> {
        self.bodies.lock().expect("bodies lock").clone()
    }
}

impl ChatBackend for MockBackend {
    fn execute(&self, body: &[u8]) -> Result<String, BackendFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let _guard = InFlightGuard(self);
        self.bodies.lock().expect("bodies lock").push(body.to_vec());
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let wire: WireRequestOwned = serde_json::from_slice(body)
            .map_err(|e| BackendFailure::Malformed(format!("mock could not parse body: {e}")))?;
        let hash = request_hash(&wire.messages);
        let mut scripts = self.scripts.lock().expect("scripts lock");
        match scripts.get_mut(&hash) {
            None => Err(BackendFailure::Status {
                code: 404,
                message: format!("no transcript entry for request hash {hash}"),
            }),
            Some(script) => {
                if script.remaining_failures > 0 {
                    if script.remaining_failures != ALWAYS_FAIL {
                        script.remaining_failures -= 1;
                    }
                    Err(BackendFailure::Status { code: 500, message: "scripted failure".to_string() })
                } else {
                    Ok(script.response.clone())
                }
            }
        }
    }
}

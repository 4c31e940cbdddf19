//! Append-only, hash-chained audit log.
//!
//! Each event commits to its predecessor: `this_hash = SHA-256(prev_hash ‖
//! canonical_json(fields))`, where the canonical JSON is the event with both
//! hash fields removed, keys in declaration order. The first event chains from
//! 32 zero bytes. Changing any byte of any event breaks the chain at that
//! event, which [`verify_events`] reports.
//!
//! The log is exported and re-imported as JSON lines, one event per line.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{SharedClock, Timestamp};

pub const GENESIS_HASH: [u8; 32] = [0u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Allowed,
    Denied,
}

/// Who performed an audited operation, rendered as `kind:id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Actor(String);

impl Actor {
    pub fn principal(id: &str) -> Self {
        Actor(format!("principal:{id}"))
    }

    pub fn instance(id: &str) -> Self {
        Actor(format!("instance:{id}"))
    }

    pub fn system() -> Self {
        Actor("system".to_owned())
    }

    /// A caller whose credential could not be resolved.
    pub fn anonymous() -> Self {
        Actor("anonymous".to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parses the `kind:id` rendering back; `None` for unknown kinds.
    pub fn parse(s: &str) -> Option<Self> {
        match s.split_once(':') {
            Some(("principal" | "instance", id)) if !id.is_empty() => Some(Actor(s.to_owned())),
            None if s == "system" || s == "anonymous" => Some(Actor(s.to_owned())),
            _ => None,
        }
    }

    pub fn instance_id(&self) -> Option<&str> {
        self.0.strip_prefix("instance:")
    }

    pub fn principal_id(&self) -> Option<&str> {
        self.0.strip_prefix("principal:")
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One audited operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub actor: Actor,
    pub effective_role: String,
    pub action: String,
    /// Object URI or job id the operation touched.
    pub target: String,
    pub outcome: Outcome,
    pub request_id: Option<String>,
    pub detail: Option<String>,
    #[serde(with = "hex_digest")]
    pub prev_hash: [u8; 32],
    #[serde(with = "hex_digest")]
    pub this_hash: [u8; 32],
}

#[derive(Serialize)]
struct CanonicalFields<'a> {
    seq: u64,
    timestamp: Timestamp,
    actor: &'a Actor,
    effective_role: &'a str,
    action: &'a str,
    target: &'a str,
    outcome: Outcome,
    request_id: &'a Option<String>,
    detail: &'a Option<String>,
}

impl AuditEvent {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let fields = CanonicalFields {
            seq: self.seq,
            timestamp: self.timestamp,
            actor: &self.actor,
            effective_role: &self.effective_role,
            action: &self.action,
            target: &self.target,
            outcome: self.outcome,
            request_id: &self.request_id,
            detail: &self.detail,
        };
        serde_json::to_vec(&fields).expect("audit fields always serialize")
    }

    pub fn compute_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.prev_hash);
        hasher.update(self.canonical_bytes());
        hasher.finalize().into()
    }
}

/// Everything an emitter supplies; sequence, time and hashes are filled in on append.
#[derive(Debug, Clone)]
pub struct EventDraft {
    pub actor: Actor,
    pub effective_role: String,
    pub action: String,
    pub target: String,
    pub outcome: Outcome,
    pub request_id: Option<String>,
    pub detail: Option<String>,
}

impl EventDraft {
    pub fn new(
        actor: Actor,
        effective_role: impl Into<String>,
        action: impl Into<String>,
        target: impl Into<String>,
        outcome: Outcome,
    ) -> Self {
        EventDraft {
            actor,
            effective_role: effective_role.into(),
            action: action.into(),
            target: target.into(),
            outcome,
            request_id: None,
            detail: None,
        }
    }

    pub fn request_id(mut self, request_id: Option<&str>) -> Self {
        self.request_id = request_id.map(str::to_owned);
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// The first position at which a chain fails to verify.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("audit chain broken at event {index}: {reason}")]
pub struct ChainBreak {
    /// Zero-based position in the log (equal to `seq` for an intact prefix).
    pub index: u64,
    pub reason: String,
}

/// Checks sequence numbering, `prev_hash` links and recomputed hashes.
pub fn verify_events(events: &[AuditEvent]) -> Result<(), ChainBreak> {
    let mut prev = GENESIS_HASH;
    for (i, event) in events.iter().enumerate() {
        let index = i as u64;
        let fail = |reason: &str| ChainBreak {
            index,
            reason: reason.to_owned(),
        };
        if event.seq != index {
            return Err(fail("sequence gap"));
        }
        if event.prev_hash != prev {
            return Err(fail("prev_hash does not match predecessor"));
        }
        if event.compute_hash() != event.this_hash {
            return Err(fail("hash mismatch"));
        }
        prev = event.this_hash;
    }
    Ok(())
}

/// Parses a JSON-lines export and verifies it. A line that does not parse is
/// reported as a break at that line.
pub fn verify_jsonl<R: BufRead>(reader: R) -> Result<u64, ChainBreak> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ChainBreak {
            index: i as u64,
            reason: format!("unreadable line: {e}"),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let event: AuditEvent = serde_json::from_str(&line).map_err(|e| ChainBreak {
            index: i as u64,
            reason: format!("malformed event: {e}"),
        })?;
        events.push(event);
    }
    verify_events(&events)?;
    Ok(events.len() as u64)
}

pub fn read_jsonl<R: BufRead>(reader: R) -> io::Result<Vec<AuditEvent>> {
    let mut events = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(events)
}

pub fn write_jsonl<W: Write>(events: &[AuditEvent], mut out: W) -> io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

struct Inner {
    events: Vec<AuditEvent>,
    sink: Option<BufWriter<File>>,
}

/// The single append point for every audited operation in the enclave.
pub struct AuditLog {
    clock: SharedClock,
    inner: Mutex<Inner>,
}

impl fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuditLog").field("len", &self.len()).finish()
    }
}

impl AuditLog {
    pub fn new(clock: SharedClock) -> Self {
        AuditLog {
            clock,
            inner: Mutex::new(Inner {
                events: Vec::new(),
                sink: None,
            }),
        }
    }

    /// Also mirrors every appended event to `path` as JSON lines. An
    /// existing file is loaded first and the chain continues from its last
    /// event; a file that does not verify is refused rather than extended.
    pub fn with_file_sink(clock: SharedClock, path: &Path) -> io::Result<Self> {
        let existing = match File::open(path) {
            Ok(f) => read_jsonl(BufReader::new(f))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        verify_events(&existing).map_err(|b| io::Error::new(io::ErrorKind::InvalidData, b.to_string()))?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let log = Self::new(clock);
        {
            let mut inner = log.inner.lock().unwrap();
            inner.events = existing;
            inner.sink = Some(BufWriter::new(file));
        }
        Ok(log)
    }

    pub fn append(&self, draft: EventDraft) -> AuditEvent {
        let timestamp = self.clock.now();
        let mut inner = self.inner.lock().unwrap();
        let prev_hash = inner
            .events
            .last()
            .map(|e| e.this_hash)
            .unwrap_or(GENESIS_HASH);
        let mut event = AuditEvent {
            seq: inner.events.len() as u64,
            timestamp,
            actor: draft.actor,
            effective_role: draft.effective_role,
            action: draft.action,
            target: draft.target,
            outcome: draft.outcome,
            request_id: draft.request_id,
            detail: draft.detail,
            prev_hash,
            this_hash: [0; 32],
        };
        event.this_hash = event.compute_hash();
        if let Some(sink) = inner.sink.as_mut() {
            // The in-memory chain stays authoritative if the mirror fails.
            let written = serde_json::to_writer(&mut *sink, &event)
                .map_err(io::Error::other)
                .and_then(|_| sink.write_all(b"\n"))
                .and_then(|_| sink.flush());
            if let Err(e) = written {
                tracing::warn!("audit file sink write failed: {e}");
            }
        }
        inner.events.push(event.clone());
        event
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<AuditEvent> {
        self.inner.lock().unwrap().events.clone()
    }

    /// Events with `from <= seq < to`.
    pub fn range(&self, from: u64, to: u64) -> Vec<AuditEvent> {
        let inner = self.inner.lock().unwrap();
        let len = inner.events.len() as u64;
        let (from, to) = (from.min(len), to.min(len));
        if from >= to {
            return Vec::new();
        }
        inner.events[from as usize..to as usize].to_vec()
    }

    pub fn verify(&self) -> Result<(), ChainBreak> {
        verify_events(&self.inner.lock().unwrap().events)
    }

    pub fn verify_chain(&self) -> bool {
        self.verify().is_ok()
    }

    pub fn export_jsonl<W: Write>(&self, out: W) -> io::Result<()> {
        write_jsonl(&self.inner.lock().unwrap().events, out)
    }

    pub fn export_to_file(&self, path: &Path) -> io::Result<()> {
        self.export_jsonl(BufWriter::new(File::create(path)?))
    }
}

pub fn verify_file(path: &Path) -> io::Result<Result<u64, ChainBreak>> {
    Ok(verify_jsonl(BufReader::new(File::open(path)?)))
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(digest: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(digest))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

//! Append-only audit log with a SHA-256 digest chain.
//!
//! Each record's `payload_digest` covers the canonical serialization of the
//! record envelope (seq, ts, kind, outcome, prev_digest) together with the
//! payload, and `prev_digest` is the previous record's `payload_digest`.
//! Altering any field of record `n`, or its stored payload, therefore makes
//! verification fail at exactly `n`.
//!
//! On disk the log is two line-delimited JSON files: the records, and a
//! sibling payload file keyed by digest.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::Timestamp;

pub const ZERO_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditKind {
    MemoryWrite,
    RoutingChange,
    ToolInvocation,
    PermissionChange,
    CollaborationFailure,
    GuardrailChange,
}

impl AuditKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditKind::MemoryWrite => "memory-write",
            AuditKind::RoutingChange => "routing-change",
            AuditKind::ToolInvocation => "tool-invocation",
            AuditKind::PermissionChange => "permission-change",
            AuditKind::CollaborationFailure => "collaboration-failure",
            AuditKind::GuardrailChange => "guardrail-change",
        }
    }
}

impl std::str::FromStr for AuditKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown audit kind `{s}`"))
    }
}

impl std::fmt::Display for AuditKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub ts: Timestamp,
    pub kind: AuditKind,
    pub payload_digest: String,
    pub prev_digest: String,
    pub outcome: String,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("audit serialization failure: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("audit append rejected by backend: {0}")]
    Rejected(String),
    #[error("audit chain broken at seq {0}")]
    Broken(u64),
    #[error("malformed audit file {path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
}

/// Durable sink for appended records. An error aborts the append and, with
/// it, the state change being audited.
pub trait AuditBackend {
    fn persist(&mut self, record: &AuditRecord, payload: &Value) -> Result<(), AuditError>;
}

/// Keeps nothing beyond the in-memory log.
#[derive(Debug, Default)]
pub struct MemoryBackend;

impl AuditBackend for MemoryBackend {
    fn persist(&mut self, _record: &AuditRecord, _payload: &Value) -> Result<(), AuditError> {
        Ok(())
    }
}

/// Accepts a fixed number of appends, then fails every later one. Used to
/// exercise fail-closed behaviour.
#[derive(Debug)]
pub struct FailingBackend {
    remaining: usize,
}

impl FailingBackend {
    pub fn after(successful_appends: usize) -> Self {
        Self { remaining: successful_appends }
    }
}

impl AuditBackend for FailingBackend {
    fn persist(&mut self, _record: &AuditRecord, _payload: &Value) -> Result<(), AuditError> {
        if self.remaining == 0 {
            return Err(AuditError::Rejected("injected failure".into()));
        }
        self.remaining -= 1;
        Ok(())
    }
}

/// Appends to `<name>.jsonl` and its sibling payload file.
#[derive(Debug)]
pub struct FileBackend {
    records: File,
    payloads: File,
}

impl FileBackend {
    pub fn open(path: &Path) -> Result<Self, AuditError> {
        let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p);
        Ok(Self {
            records: open(path)?,
            payloads: open(&payload_path_for(path))?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PayloadLine {
    digest: String,
    payload: Value,
}

impl AuditBackend for FileBackend {
    fn persist(&mut self, record: &AuditRecord, payload: &Value) -> Result<(), AuditError> {
        let mut payload_line = serde_json::to_vec(&PayloadLine {
            digest: record.payload_digest.clone(),
            payload: payload.clone(),
        })?;
        payload_line.push(b'\n');
        let mut record_line = serde_json::to_vec(record)?;
        record_line.push(b'\n');
        self.payloads.write_all(&payload_line)?;
        self.payloads.flush()?;
        self.records.write_all(&record_line)?;
        self.records.flush()?;
        Ok(())
    }
}

/// `audit.jsonl` -> `audit.payloads.jsonl`.
pub fn payload_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("audit");
    path.with_file_name(format!("{stem}.payloads.jsonl"))
}

fn envelope_digest(
    seq: u64,
    ts: Timestamp,
    kind: AuditKind,
    outcome: &str,
    prev_digest: &str,
    payload: &Value,
) -> Result<String, serde_json::Error> {
    let mut envelope = Map::new();
    envelope.insert("kind".into(), Value::String(kind.as_str().into()));
    envelope.insert("outcome".into(), Value::String(outcome.into()));
    envelope.insert("payload".into(), payload.clone());
    envelope.insert("prev_digest".into(), Value::String(prev_digest.into()));
    envelope.insert("seq".into(), Value::from(seq));
    envelope.insert("ts".into(), Value::from(ts));
    let bytes = serde_json::to_vec(&Value::Object(envelope))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Recomputes every digest; `Err(seq)` names the first record that does not
/// match.
pub fn verify_chain(records: &[AuditRecord], payloads: &BTreeMap<String, Value>) -> Result<(), u64> {
    let mut prev = ZERO_DIGEST.to_string();
    for (index, record) in records.iter().enumerate() {
        let index = index as u64;
        if record.seq != index || record.prev_digest != prev {
            return Err(index);
        }
        let Some(payload) = payloads.get(&record.payload_digest) else {
            return Err(index);
        };
        let recomputed = envelope_digest(
            record.seq,
            record.ts,
            record.kind,
            &record.outcome,
            &record.prev_digest,
            payload,
        )
        .map_err(|_| index)?;
        if recomputed != record.payload_digest {
            return Err(index);
        }
        prev = record.payload_digest.clone();
    }
    Ok(())
}

/// Reads a log and its payload file without verifying the chain. A missing
/// log reads as empty.
pub fn read_log(path: &Path) -> Result<(Vec<AuditRecord>, BTreeMap<String, Value>), AuditError> {
    let mut records = Vec::new();
    let mut payloads = BTreeMap::new();
    if !path.exists() {
        return Ok((records, payloads));
    }
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| AuditError::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    let payload_path = payload_path_for(path);
    if payload_path.exists() {
        for (n, line) in BufReader::new(File::open(&payload_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: PayloadLine = serde_json::from_str(&line).map_err(|e| AuditError::Malformed {
                path: payload_path.clone(),
                line: n + 1,
                reason: e.to_string(),
            })?;
            payloads.insert(entry.digest, entry.payload);
        }
    }
    Ok((records, payloads))
}

/// The single appender for audit records.
pub struct AuditLog {
    records: Vec<AuditRecord>,
    payloads: BTreeMap<String, Value>,
    backend: Box<dyn AuditBackend>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog").field("records", &self.records.len()).finish()
    }
}

impl Default for AuditLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::with_backend(Box::new(MemoryBackend))
    }

    pub fn with_backend(backend: Box<dyn AuditBackend>) -> Self {
        Self {
            records: Vec::new(),
            payloads: BTreeMap::new(),
            backend,
        }
    }

    /// Opens (or creates) a file-backed log. Existing content must verify;
    /// new records extend the chain.
    pub fn open(path: &Path) -> Result<Self, AuditError> {
        let (records, payloads) = read_log(path)?;
        verify_chain(&records, &payloads).map_err(AuditError::Broken)?;
        Ok(Self {
            records,
            payloads,
            backend: Box::new(FileBackend::open(path)?),
        })
    }

    /// Appends one record. Nothing is appended if the backend fails.
    pub fn record(
        &mut self,
        kind: AuditKind,
        payload: Value,
        outcome: &str,
        ts: Timestamp,
    ) -> Result<u64, AuditError> {
        let seq = self.records.len() as u64;
        let prev_digest = self.head_digest().to_string();
        let payload_digest = envelope_digest(seq, ts, kind, outcome, &prev_digest, &payload)?;
        let record = AuditRecord {
            seq,
            ts,
            kind,
            payload_digest,
            prev_digest,
            outcome: outcome.to_string(),
        };
        self.backend.persist(&record, &payload)?;
        self.payloads.insert(record.payload_digest.clone(), payload);
        self.records.push(record);
        Ok(seq)
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn payloads(&self) -> &BTreeMap<String, Value> {
        &self.payloads
    }

    pub fn payload(&self, record: &AuditRecord) -> Option<&Value> {
        self.payloads.get(&record.payload_digest)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn head_digest(&self) -> &str {
        self.records.last().map_or(ZERO_DIGEST, |r| r.payload_digest.as_str())
    }

    pub fn last_ts(&self) -> Option<Timestamp> {
        self.records.last().map(|r| r.ts)
    }

    pub fn verify(&self) -> Result<(), u64> {
        verify_chain(&self.records, &self.payloads)
    }

    /// Records together with their payloads, in order.
    pub fn iter_with_payloads(&self) -> impl Iterator<Item = (&AuditRecord, Option<&Value>)> {
        self.records.iter().map(|r| (r, self.payloads.get(&r.payload_digest)))
    }

    /// Writes the log to a fresh pair of files (records + payloads).
    pub fn export(&self, path: &Path) -> Result<(), AuditError> {
        let mut records = Vec::new();
        let mut payloads = Vec::new();
        for record in &self.records {
            serde_json::to_writer(&mut records, record)?;
            records.push(b'\n');
            let payload = self.payloads.get(&record.payload_digest).cloned().unwrap_or(Value::Null);
            serde_json::to_writer(
                &mut payloads,
                &PayloadLine {
                    digest: record.payload_digest.clone(),
                    payload,
                },
            )?;
            payloads.push(b'\n');
        }
        std::fs::write(path, records)?;
        std::fs::write(payload_path_for(path), payloads)?;
        Ok(())
    }
}

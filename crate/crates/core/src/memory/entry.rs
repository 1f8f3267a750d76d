use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::governance::{AuditError, RejectReason};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryStatus {
    Active,
    Deprecated,
    Conflicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryEntry {
    pub id: String,
    /// Subject of the fact. Narrow keys keep entries precise.
    pub scope_key: String,
    pub content: String,
    pub confidence: f64,
    pub created_at: Timestamp,
    pub last_verified_at: Timestamp,
    pub last_accessed_at: Timestamp,
    /// Session id, extractor id or operator that produced the entry.
    pub provenance: String,
    pub status: EntryStatus,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl MemoryEntry {
    /// A fresh active entry created, verified and accessed at `now`. The id
    /// is left empty for the store to assign.
    pub fn new(scope_key: &str, content: &str, confidence: f64, provenance: &str, now: Timestamp) -> Self {
        Self {
            id: String::new(),
            scope_key: scope_key.to_string(),
            content: content.to_string(),
            confidence,
            created_at: now,
            last_verified_at: now,
            last_accessed_at: now,
            provenance: provenance.to_string(),
            status: EntryStatus::Active,
            tags: BTreeSet::new(),
        }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }

    pub fn with_tags<'a>(mut self, tags: impl IntoIterator<Item = &'a str>) -> Self {
        self.tags = tags.into_iter().map(str::to_string).collect();
        self
    }

    pub fn is_active(&self) -> bool {
        self.status == EntryStatus::Active
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        let invalid = |reason: &str| Err(MemoryError::InvalidEntry(format!("{}: {reason}", self.id)));
        if !(0.0..=1.0).contains(&self.confidence) {
            return invalid("confidence outside [0,1]");
        }
        if self.provenance.trim().is_empty() {
            return invalid("empty provenance");
        }
        if self.last_verified_at < self.created_at {
            return invalid("verified before created");
        }
        if self.scope_key.is_empty() {
            return invalid("empty scope_key");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictReason {
    Confidence,
    Recency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub winner: String,
    pub loser: String,
    pub reason: ConflictReason,
    pub resolved_at: Timestamp,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("invalid entry {0}")]
    InvalidEntry(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("write rejected by gate: {}", .0.as_str())]
    GateRejected(RejectReason),
    #[error("candidate must be active")]
    CandidateNotActive,
    #[error("duplicate entry id {0}")]
    DuplicateId(String),
    #[error("no entry with id {0}")]
    UnknownEntry(String),
    #[error("conflict requires a shared scope_key and distinct ids")]
    NotInConflict,
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error(transparent)]
    Audit(#[from] AuditError),
}

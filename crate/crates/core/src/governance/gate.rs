use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AuditError, AuditKind, AuditLog};
use crate::environment::{EntryVerifier, Verdict};
use crate::memory::MemoryEntry;
use crate::skills::SkillOutcome;
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    UnverifiedSkillOutput,
    VerifierFailed,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::UnverifiedSkillOutput => "unverified-skill-output",
            RejectReason::VerifierFailed => "verifier-failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "decision", content = "reason")]
pub enum GateDecision {
    Accept,
    Reject(RejectReason),
}

impl GateDecision {
    pub fn is_accept(self) -> bool {
        matches!(self, GateDecision::Accept)
    }

    pub fn label(self) -> String {
        match self {
            GateDecision::Accept => "accepted".into(),
            GateDecision::Reject(reason) => format!("rejected:{}", reason.as_str()),
        }
    }
}

/// Handle memory writes pass through: the skill outcome that produced the
/// candidate (if any) and a verifier against the environment (if any).
#[derive(Clone, Copy, Default)]
pub struct WriteGate<'a> {
    pub source: Option<&'a SkillOutcome>,
    pub verifier: Option<&'a dyn EntryVerifier>,
}

impl<'a> WriteGate<'a> {
    pub fn open() -> Self {
        Self::default()
    }

    pub fn with_verifier(verifier: &'a dyn EntryVerifier) -> Self {
        Self {
            source: None,
            verifier: Some(verifier),
        }
    }

    pub fn from_outcome(source: &'a SkillOutcome, verifier: Option<&'a dyn EntryVerifier>) -> Self {
        Self {
            source: Some(source),
            verifier,
        }
    }

    /// Unverified skill output is never written; a verifier that can run must
    /// pass. An unavailable verifier does not block the write.
    pub fn evaluate(&self, candidate: &MemoryEntry) -> GateDecision {
        if self.source.is_some_and(|o| !o.verified()) {
            return GateDecision::Reject(RejectReason::UnverifiedSkillOutput);
        }
        if let Some(verifier) = self.verifier {
            if verifier.check(candidate) == Verdict::Fail {
                return GateDecision::Reject(RejectReason::VerifierFailed);
            }
        }
        GateDecision::Accept
    }

    pub fn audit_fields(&self) -> serde_json::Value {
        match self.source {
            Some(o) => json!({ "invocation_id": o.invocation_id, "verified": o.verified() }),
            None => serde_json::Value::Null,
        }
    }
}

/// Standalone gate decision, audited as a memory-write record. The memory
/// store folds the same decision into its own single write record instead
/// of calling this.
pub fn gate_write(
    candidate: &MemoryEntry,
    gate: &WriteGate<'_>,
    audit: &mut AuditLog,
    now: Timestamp,
) -> Result<GateDecision, AuditError> {
    let decision = gate.evaluate(candidate);
    audit.record(
        AuditKind::MemoryWrite,
        json!({
            "op": "gate",
            "scope_key": candidate.scope_key,
            "source": gate.audit_fields(),
            "decision": decision,
        }),
        &decision.label(),
        now,
    )?;
    Ok(decision)
}

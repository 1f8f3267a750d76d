use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::entry::{ConflictReason, ConflictRecord, EntryStatus, MemoryEntry, MemoryError};
use super::scoring::{RelevanceModel, ScoringConfig, TokenJaccard};
use crate::environment::{EntryVerifier, Verdict};
use crate::governance::{AuditKind, AuditLog, WriteGate};
use crate::Timestamp;

/// Confidence gap below which a conflict is decided by recency.
pub const CONFLICT_TIE_THRESHOLD: f64 = 0.05;
/// Initial confidence of facts proposed during session consolidation.
pub const CONSOLIDATION_CONFIDENCE: f64 = 0.5;
/// Entries below this confidence are demoted by a sweep once stale.
pub const SWEEP_CONFIDENCE_CEILING: f64 = 0.4;
const DEPRECATION_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryQuery {
    pub text: String,
    pub k: usize,
    /// How destructive acting on a wrong answer would be, in `[0,1]`.
    pub action_risk: f64,
    pub now: Timestamp,
    /// Retrievability budget: at most this many entries are scored.
    pub max_candidates: usize,
}

impl MemoryQuery {
    pub fn new(text: &str, k: usize, action_risk: f64, now: Timestamp, max_candidates: usize) -> Self {
        Self {
            text: text.to_string(),
            k,
            action_risk,
            now,
            max_candidates,
        }
    }

    fn validate(&self) -> Result<(), MemoryError> {
        if self.k == 0 || self.max_candidates == 0 {
            return Err(MemoryError::InvalidQuery("k and max_candidates must be positive".into()));
        }
        if self.k > self.max_candidates {
            return Err(MemoryError::InvalidQuery("k exceeds max_candidates".into()));
        }
        if !(0.0..=1.0).contains(&self.action_risk) {
            return Err(MemoryError::InvalidQuery("action_risk outside [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

/// Top-k active entries, scores non-increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub entries: Vec<ScoredId>,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "result")]
pub enum VerificationOutcome {
    Passed { before: f64, after: f64 },
    Failed { before: f64, after: f64, deprecated: bool },
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "result")]
pub enum WriteOutcome {
    Stored { id: String, conflict: Option<ConflictRecord> },
    /// A verbatim duplicate of an active entry: that entry was re-verified.
    Deduplicated { id: String },
}

impl WriteOutcome {
    pub fn id(&self) -> &str {
        match self {
            WriteOutcome::Stored { id, .. } | WriteOutcome::Deduplicated { id } => id,
        }
    }

    /// Whether the written fact is active after the write.
    pub fn label(&self, stored_status: EntryStatus) -> &'static str {
        match (self, stored_status) {
            (WriteOutcome::Deduplicated { .. }, _) => "deduplicated",
            (WriteOutcome::Stored { .. }, EntryStatus::Active) => "accepted",
            (WriteOutcome::Stored { .. }, _) => "accepted:conflicted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedFact {
    pub scope_key: String,
    pub content: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// Proposes durable facts from a session transcript.
pub trait Extractor {
    fn name(&self) -> &str;
    fn extract(&self, transcript: &[String]) -> Vec<ProposedFact>;
}

/// Decides a conflict between two entries about the same subject.
///
/// Higher confidence wins unless the gap is under
/// [`CONFLICT_TIE_THRESHOLD`], in which case the more recently verified
/// entry wins; a full tie goes to the lexicographically smaller id.
pub fn resolve_conflict(a: &MemoryEntry, b: &MemoryEntry, now: Timestamp) -> Result<ConflictRecord, MemoryError> {
    if a.scope_key != b.scope_key || a.id == b.id {
        return Err(MemoryError::NotInConflict);
    }
    let (winner, loser, reason) = if (a.confidence - b.confidence).abs() >= CONFLICT_TIE_THRESHOLD {
        if a.confidence > b.confidence {
            (a, b, ConflictReason::Confidence)
        } else {
            (b, a, ConflictReason::Confidence)
        }
    } else {
        match a.last_verified_at.cmp(&b.last_verified_at) {
            Ordering::Greater => (a, b, ConflictReason::Recency),
            Ordering::Less => (b, a, ConflictReason::Recency),
            Ordering::Equal if a.id < b.id => (a, b, ConflictReason::Recency),
            Ordering::Equal => (b, a, ConflictReason::Recency),
        }
    };
    Ok(ConflictRecord {
        winner: winner.id.clone(),
        loser: loser.id.clone(),
        reason,
        resolved_at: now,
    })
}

/// The memory store. Reads take `&self` except retrieval, which stamps
/// access times; every write goes through `&mut self` and appends exactly one
/// audit record before it is committed.
#[derive(Clone)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
    index: BTreeMap<String, usize>,
    next_id: u64,
    scoring: ScoringConfig,
    relevance: Arc<dyn RelevanceModel>,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("entries", &self.entries)
            .field("scoring", &self.scoring)
            .finish()
    }
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new(ScoringConfig::default())
    }
}

impl MemoryStore {
    pub fn new(scoring: ScoringConfig) -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
            next_id: 1,
            scoring,
            relevance: Arc::new(TokenJaccard),
        }
    }

    pub fn with_relevance(mut self, model: Arc<dyn RelevanceModel>) -> Self {
        self.relevance = model;
        self
    }

    /// Builds a store from already-validated entries, e.g. loaded from disk.
    pub fn from_entries(entries: Vec<MemoryEntry>, scoring: ScoringConfig) -> Result<Self, MemoryError> {
        let mut store = Self::new(scoring);
        for entry in entries {
            entry.validate()?;
            if store.index.contains_key(&entry.id) || entry.id.is_empty() {
                return Err(MemoryError::DuplicateId(entry.id));
            }
            if let Some(n) = entry.id.strip_prefix("mem-").and_then(|n| n.parse::<u64>().ok()) {
                store.next_id = store.next_id.max(n + 1);
            }
            store.index.insert(entry.id.clone(), store.entries.len());
            store.entries.push(entry);
        }
        Ok(store)
    }

    pub fn scoring(&self) -> &ScoringConfig {
        &self.scoring
    }

    pub fn relevance_model(&self) -> &dyn RelevanceModel {
        self.relevance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn active(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter().filter(|e| e.is_active())
    }

    pub fn get(&self, id: &str) -> Option<&MemoryEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    fn get_mut(&mut self, id: &str) -> Option<&mut MemoryEntry> {
        self.index.get(id).map(|&i| &mut self.entries[i])
    }

    fn allocate_id(&mut self) -> String {
        loop {
            let id = format!("mem-{:06}", self.next_id);
            self.next_id += 1;
            if !self.index.contains_key(&id) {
                return id;
            }
        }
    }

    fn insert(&mut self, entry: MemoryEntry) {
        self.index.insert(entry.id.clone(), self.entries.len());
        self.entries.push(entry);
    }

    /// Scores one entry against a query with the store's weights.
    pub fn score_entry(&self, entry: &MemoryEntry, query: &MemoryQuery) -> f64 {
        let rel = self.relevance.relevance(&entry.content, &query.text);
        let stale = self.scoring.staleness_at(entry.last_verified_at, query.now);
        self.scoring.score(rel, stale, query.action_risk, entry.confidence)
    }

    /// Writes `candidate` through `gate`.
    ///
    /// A verbatim duplicate of an active entry with the same scope refreshes
    /// that entry instead of inserting. Different content under an active
    /// scope is resolved with [`resolve_conflict`] before commit, and the
    /// loser is marked conflicted. One memory-write record is appended for
    /// every call, including rejections.
    pub fn write_entry(
        &mut self,
        mut candidate: MemoryEntry,
        gate: &WriteGate<'_>,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<WriteOutcome, MemoryError> {
        if candidate.status != EntryStatus::Active {
            return Err(MemoryError::CandidateNotActive);
        }
        if !candidate.id.is_empty() && self.index.contains_key(&candidate.id) {
            return Err(MemoryError::DuplicateId(candidate.id));
        }
        candidate.validate()?;

        let decision = gate.evaluate(&candidate);
        let base = json!({
            "op": "write",
            "scope_key": candidate.scope_key,
            "content": candidate.content,
            "confidence": candidate.confidence,
            "provenance": candidate.provenance,
            "source": gate.audit_fields(),
            "decision": decision,
        });
        if let crate::governance::GateDecision::Reject(reason) = decision {
            audit.record(AuditKind::MemoryWrite, base, &decision.label(), now)?;
            return Err(MemoryError::GateRejected(reason));
        }

        let existing = self
            .entries
            .iter()
            .find(|e| e.is_active() && e.scope_key == candidate.scope_key)
            .cloned();

        if let Some(existing) = existing.as_ref().filter(|e| e.content == candidate.content) {
            let mut payload = base;
            payload["entry_id"] = json!(existing.id);
            audit.record(AuditKind::MemoryWrite, payload, "deduplicated", now)?;
            let entry = self.get_mut(&existing.id).expect("indexed");
            entry.last_verified_at = entry.last_verified_at.max(now);
            entry.last_accessed_at = entry.last_accessed_at.max(now);
            return Ok(WriteOutcome::Deduplicated { id: existing.id.clone() });
        }

        if candidate.id.is_empty() {
            candidate.id = self.allocate_id();
        }
        let conflict = match &existing {
            Some(existing) => Some(resolve_conflict(existing, &candidate, now)?),
            None => None,
        };
        if let Some(c) = &conflict {
            if c.loser == candidate.id {
                candidate.status = EntryStatus::Conflicted;
            }
        }
        let mut payload = base;
        payload["entry_id"] = json!(candidate.id);
        payload["conflict"] = json!(conflict);
        let outcome = WriteOutcome::Stored {
            id: candidate.id.clone(),
            conflict: conflict.clone(),
        };
        audit.record(AuditKind::MemoryWrite, payload, outcome.label(candidate.status), now)?;

        if let Some(c) = &conflict {
            if c.loser != candidate.id {
                self.get_mut(&c.loser).expect("indexed").status = EntryStatus::Conflicted;
            }
        }
        self.insert(candidate);
        Ok(outcome)
    }

    /// Resolves a conflict between two stored entries and marks the loser.
    pub fn resolve_conflict(
        &mut self,
        a: &str,
        b: &str,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<ConflictRecord, MemoryError> {
        let first = self.get(a).ok_or_else(|| MemoryError::UnknownEntry(a.into()))?;
        let second = self.get(b).ok_or_else(|| MemoryError::UnknownEntry(b.into()))?;
        let record = resolve_conflict(first, second, now)?;
        audit.record(AuditKind::MemoryWrite, json!({ "op": "conflict", "conflict": record }), "conflict-resolved", now)?;
        self.get_mut(&record.loser).expect("indexed").status = EntryStatus::Conflicted;
        Ok(record)
    }

    /// Ranks active entries for `query`.
    ///
    /// The retrievability budget admits the `max_candidates` most recently
    /// verified active entries (ties by id); those are scored and the top `k`
    /// returned, ties broken by id. Returned entries get their access time
    /// set to `query.now`.
    pub fn retrieve(&mut self, query: &MemoryQuery) -> Result<RetrievalResult, MemoryError> {
        query.validate()?;
        let mut pool: Vec<&MemoryEntry> = self.active().collect();
        pool.sort_by(|a, b| b.last_verified_at.cmp(&a.last_verified_at).then_with(|| a.id.cmp(&b.id)));
        pool.truncate(query.max_candidates);

        let mut scored: Vec<ScoredId> = pool
            .into_iter()
            .map(|e| ScoredId {
                id: e.id.clone(),
                score: self.score_entry(e, query),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        scored.truncate(query.k);

        for hit in &scored {
            if let Some(entry) = self.get_mut(&hit.id) {
                entry.last_accessed_at = entry.last_accessed_at.max(query.now);
            }
        }
        Ok(RetrievalResult { entries: scored })
    }

    /// Re-checks one entry against the environment.
    ///
    /// Pass closes half the remaining confidence gap and stamps the
    /// verification time; fail halves confidence and deprecates the entry
    /// below 0.2. An unavailable verifier only touches the access time.
    pub fn verify_entry(
        &mut self,
        id: &str,
        verifier: &dyn EntryVerifier,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<VerificationOutcome, MemoryError> {
        let entry = self.get(id).ok_or_else(|| MemoryError::UnknownEntry(id.into()))?;
        let verdict = verifier.check(entry);
        let before = entry.confidence;
        let mut updated = entry.clone();
        let outcome = match verdict {
            Verdict::Pass => {
                updated.confidence = before + 0.5 * (1.0 - before);
                updated.last_verified_at = updated.last_verified_at.max(now);
                VerificationOutcome::Passed { before, after: updated.confidence }
            }
            Verdict::Fail => {
                updated.confidence = 0.5 * before;
                let deprecated = updated.is_active() && updated.confidence < DEPRECATION_FLOOR;
                if deprecated {
                    updated.status = EntryStatus::Deprecated;
                }
                VerificationOutcome::Failed {
                    before,
                    after: updated.confidence,
                    deprecated,
                }
            }
            Verdict::Unavailable => VerificationOutcome::Indeterminate,
        };
        updated.last_accessed_at = updated.last_accessed_at.max(now);
        let label = match &outcome {
            VerificationOutcome::Passed { .. } => "verify:pass",
            VerificationOutcome::Failed { deprecated: true, .. } => "verify:fail:deprecated",
            VerificationOutcome::Failed { .. } => "verify:fail",
            VerificationOutcome::Indeterminate => "verify:indeterminate",
        };
        audit.record(
            AuditKind::MemoryWrite,
            json!({ "op": "verify", "entry_id": id, "scope_key": updated.scope_key, "outcome": outcome }),
            label,
            now,
        )?;
        *self.get_mut(id).expect("indexed") = updated;
        Ok(outcome)
    }

    /// Deprecates active entries that are both stale past `horizon` and
    /// below [`SWEEP_CONFIDENCE_CEILING`]. One audit record per demotion.
    pub fn sweep(&mut self, now: Timestamp, horizon: u64, audit: &mut AuditLog) -> Result<Vec<String>, MemoryError> {
        let doomed: Vec<String> = self
            .active()
            .filter(|e| now.saturating_sub(e.last_verified_at) > horizon && e.confidence < SWEEP_CONFIDENCE_CEILING)
            .map(|e| e.id.clone())
            .collect();
        for id in &doomed {
            audit.record(
                AuditKind::MemoryWrite,
                json!({ "op": "sweep", "entry_id": id, "horizon": horizon }),
                "deprecated",
                now,
            )?;
            self.get_mut(id).expect("indexed").status = EntryStatus::Deprecated;
        }
        Ok(doomed)
    }

    /// Runs the extractor over a transcript and writes each proposal through
    /// the gate at [`CONSOLIDATION_CONFIDENCE`]. Returns the ids of newly
    /// stored entries; rejected and deduplicated proposals are left out.
    pub fn consolidate_session(
        &mut self,
        transcript: &[String],
        extractor: &dyn Extractor,
        session_id: &str,
        gate: &WriteGate<'_>,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<Vec<String>, MemoryError> {
        if transcript.is_empty() {
            return Err(MemoryError::EmptyTranscript);
        }
        let provenance = format!("session:{session_id}/extractor:{}", extractor.name());
        let mut accepted = Vec::new();
        for fact in extractor.extract(transcript) {
            let candidate = MemoryEntry::new(&fact.scope_key, &fact.content, CONSOLIDATION_CONFIDENCE, &provenance, now)
                .with_tags(fact.tags.iter().map(String::as_str));
            match self.write_entry(candidate, gate, audit, now) {
                Ok(WriteOutcome::Stored { id, .. }) => accepted.push(id),
                Ok(WriteOutcome::Deduplicated { .. }) | Err(MemoryError::GateRejected(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(accepted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::ConstVerifier;
    use crate::governance::{FailingBackend, RejectReason};

    fn entry(id: &str, scope: &str, content: &str, confidence: f64, verified: Timestamp) -> MemoryEntry {
        let mut e = MemoryEntry::new(scope, content, confidence, "operator", 0).with_id(id);
        e.last_verified_at = verified;
        e
    }

    fn open() -> WriteGate<'static> {
        WriteGate::open()
    }

    #[test]
    fn fresh_write_is_stored() {
        let mut store = MemoryStore::default();
        let mut audit = AuditLog::in_memory();
        let out = store.write_entry(MemoryEntry::new("k", "k = 1", 0.7, "op", 1), &open(), &mut audit, 1).unwrap();
        assert_eq!(out.id(), "mem-000001");
        assert_eq!(store.len(), 1);
        assert_eq!(audit.len(), 1);
        assert_eq!(audit.records()[0].outcome, "accepted");
    }

    #[test]
    fn rejected_write_leaves_store_unchanged_but_is_audited() {
        let mut store = MemoryStore::default();
        let mut audit = AuditLog::in_memory();
        let failing = ConstVerifier(Verdict::Fail);
        let gate = WriteGate::with_verifier(&failing);
        let err = store.write_entry(MemoryEntry::new("k", "v", 0.5, "op", 1), &gate, &mut audit, 1).unwrap_err();
        assert!(matches!(err, MemoryError::GateRejected(RejectReason::VerifierFailed)));
        assert!(store.is_empty());
        assert_eq!(audit.len(), 1);
    }

    #[test]
    fn contradictory_write_loses_on_confidence() {
        let mut store = MemoryStore::default();
        let mut audit = AuditLog::in_memory();
        store.write_entry(MemoryEntry::new("db.host", "db.host = alpha", 0.9, "op", 1), &open(), &mut audit, 1).unwrap();
        let out = store
            .write_entry(MemoryEntry::new("db.host", "db.host = beta", 0.5, "op", 2), &open(), &mut audit, 2)
            .unwrap();
        let WriteOutcome::Stored { id, conflict: Some(c) } = out else { panic!("expected conflict") };
        assert_eq!(c.loser, id);
        assert_eq!(c.reason, ConflictReason::Confidence);
        assert_eq!(store.get(&id).unwrap().status, EntryStatus::Conflicted);
        assert_eq!(store.active().count(), 1);
        assert_eq!(audit.len(), 2);
    }

    #[test]
    fn conflict_rules() {
        let a = entry("a", "k", "x", 0.9, 0);
        let b = entry("b", "k", "y", 0.5, 0);
        let r = resolve_conflict(&a, &b, 10).unwrap();
        assert_eq!((r.winner.as_str(), r.reason), ("a", ConflictReason::Confidence));

        let a = entry("a", "k", "x", 0.80, 5);
        let b = entry("b", "k", "y", 0.78, 9);
        let r = resolve_conflict(&a, &b, 10).unwrap();
        assert_eq!((r.winner.as_str(), r.reason), ("b", ConflictReason::Recency));

        let a = entry("b2", "k", "x", 0.6, 3);
        let b = entry("a1", "k", "y", 0.6, 3);
        let r = resolve_conflict(&a, &b, 10).unwrap();
        assert_eq!((r.winner.as_str(), r.reason), ("a1", ConflictReason::Recency));

        assert!(resolve_conflict(&a, &entry("z", "other", "y", 0.6, 3), 0).is_err());
    }

    #[test]
    fn verify_update_rule() {
        let mut store = MemoryStore::from_entries(
            vec![entry("a", "k", "x", 0.6, 0), entry("b", "j", "y", 0.3, 0), entry("c", "m", "z", 1.0, 0)],
            ScoringConfig::default(),
        )
        .unwrap();
        let mut audit = AuditLog::in_memory();
        let pass = ConstVerifier(Verdict::Pass);
        let fail = ConstVerifier(Verdict::Fail);

        let out = store.verify_entry("a", &pass, &mut audit, 4).unwrap();
        let VerificationOutcome::Passed { after, .. } = out else { panic!() };
        assert!((after - 0.8).abs() < 1e-12);
        assert_eq!(store.get("a").unwrap().last_verified_at, 4);

        let out = store.verify_entry("b", &fail, &mut audit, 4).unwrap();
        assert_eq!(out, VerificationOutcome::Failed { before: 0.3, after: 0.15, deprecated: true });
        assert_eq!(store.get("b").unwrap().status, EntryStatus::Deprecated);

        let out = store.verify_entry("c", &pass, &mut audit, 4).unwrap();
        assert_eq!(out, VerificationOutcome::Passed { before: 1.0, after: 1.0 });
        assert_eq!(audit.len(), 3);
    }

    #[test]
    fn unavailable_verifier_only_touches_access_time() {
        let mut store = MemoryStore::from_entries(vec![entry("a", "k", "x", 0.6, 0)], ScoringConfig::default()).unwrap();
        let before = store.get("a").unwrap().clone();
        let mut audit = AuditLog::in_memory();
        let out = store.verify_entry("a", &ConstVerifier(Verdict::Unavailable), &mut audit, 9).unwrap();
        assert_eq!(out, VerificationOutcome::Indeterminate);
        let after = store.get("a").unwrap();
        assert_eq!(after.last_accessed_at, 9);
        assert_eq!(MemoryEntry { last_accessed_at: 0, ..after.clone() }, before);
    }

    #[test]
    fn retrieval_on_empty_store() {
        let mut store = MemoryStore::default();
        let r = store.retrieve(&MemoryQuery::new("anything", 3, 0.5, 0, 10)).unwrap();
        assert!(r.entries.is_empty());
    }

    #[test]
    fn single_perfect_entry_scores_w_rel() {
        let mut store = MemoryStore::from_entries(vec![entry("a", "k", "loader path", 1.0, 5)], ScoringConfig::default()).unwrap();
        let r = store.retrieve(&MemoryQuery::new("path loader", 1, 0.0, 5, 10)).unwrap();
        assert!((r.entries[0].score - 0.60).abs() < 1e-12);
        assert_eq!(store.get("a").unwrap().last_accessed_at, 5);
    }

    #[test]
    fn documented_score_example() {
        // rel 0.8 (4 of 5 tokens), age = tau, confidence 0.5, full risk.
        let store = MemoryStore::default();
        let e = entry("a", "k", "a b c d", 0.5, 0);
        let q = MemoryQuery::new("a b c d e", 1, 1.0, 7, 10);
        assert!((store.score_entry(&e, &q) - 0.2470).abs() < 1e-4);
    }

    #[test]
    fn invalid_queries() {
        let mut store = MemoryStore::default();
        assert!(store.retrieve(&MemoryQuery::new("q", 0, 0.5, 0, 10)).is_err());
        assert!(store.retrieve(&MemoryQuery::new("q", 11, 0.5, 0, 10)).is_err());
        assert!(store.retrieve(&MemoryQuery::new("q", 1, 1.5, 0, 10)).is_err());
    }

    #[test]
    fn retrievability_budget_limits_scoring() {
        let entries = (0..5).map(|i| entry(&format!("e{i}"), &format!("k{i}"), "q", 0.9, i)).collect();
        let mut store = MemoryStore::from_entries(entries, ScoringConfig::default()).unwrap();
        let r = store.retrieve(&MemoryQuery::new("q", 2, 0.0, 10, 2)).unwrap();
        let ids: Vec<&str> = r.ids().collect();
        assert_eq!(ids, ["e4", "e3"]);
    }

    #[test]
    fn sweep_rules() {
        let mut store = MemoryStore::from_entries(
            vec![entry("old-weak", "a", "x", 0.3, 0), entry("old-strong", "b", "y", 0.9, 0), entry("new-weak", "c", "z", 0.3, 18)],
            ScoringConfig::default(),
        )
        .unwrap();
        let mut audit = AuditLog::in_memory();
        assert_eq!(store.sweep(20, 10, &mut audit).unwrap(), ["old-weak"]);
        assert_eq!(store.get("old-strong").unwrap().status, EntryStatus::Active);
        assert_eq!(audit.len(), 1);
        assert!(store.sweep(20, 10, &mut audit).unwrap().is_empty());
    }

    struct Fixed(Vec<ProposedFact>);

    impl Extractor for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn extract(&self, _transcript: &[String]) -> Vec<ProposedFact> {
            self.0.clone()
        }
    }

    fn fact(scope: &str, content: &str) -> ProposedFact {
        ProposedFact { scope_key: scope.into(), content: content.into(), tags: vec![] }
    }

    #[test]
    fn consolidation_counts() {
        let mut store = MemoryStore::default();
        let mut audit = AuditLog::in_memory();
        let transcript = vec!["turn".to_string()];

        let empty = store.consolidate_session(&transcript, &Fixed(vec![]), "s1", &open(), &mut audit, 1).unwrap();
        assert!(empty.is_empty() && store.is_empty() && audit.is_empty());

        let verifier = |e: &MemoryEntry| if e.scope_key == "bad" { Verdict::Fail } else { Verdict::Pass };
        let gate = WriteGate::with_verifier(&verifier);
        let extractor = Fixed(vec![fact("a", "a = 1"), fact("bad", "bad = 2"), fact("c", "c = 3")]);
        let ids = store.consolidate_session(&transcript, &extractor, "s1", &gate, &mut audit, 2).unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(audit.len(), 3);
        assert_eq!(store.get(&ids[0]).unwrap().confidence, CONSOLIDATION_CONFIDENCE);
        assert_eq!(store.get(&ids[0]).unwrap().provenance, "session:s1/extractor:fixed");

        let again = store.consolidate_session(&transcript, &Fixed(vec![fact("a", "a = 1")]), "s2", &gate, &mut audit, 7).unwrap();
        assert!(again.is_empty());
        assert_eq!(store.len(), 2);
        assert_eq!(store.get(&ids[0]).unwrap().last_verified_at, 7);

        assert!(matches!(
            store.consolidate_session(&[], &extractor, "s3", &gate, &mut audit, 8),
            Err(MemoryError::EmptyTranscript)
        ));
    }

    #[test]
    fn write_preconditions() {
        let mut store = MemoryStore::default();
        let mut audit = AuditLog::in_memory();
        let mut e = MemoryEntry::new("k", "v", 0.5, "op", 1);
        e.status = EntryStatus::Deprecated;
        assert!(matches!(store.write_entry(e, &open(), &mut audit, 1), Err(MemoryError::CandidateNotActive)));
        let e = MemoryEntry::new("k", "v", 0.5, "", 1);
        assert!(matches!(store.write_entry(e, &open(), &mut audit, 1), Err(MemoryError::InvalidEntry(_))));
        let e = MemoryEntry::new("k", "v", 1.5, "op", 1);
        assert!(matches!(store.write_entry(e, &open(), &mut audit, 1), Err(MemoryError::InvalidEntry(_))));
        assert!(audit.is_empty());
    }

    #[test]
    fn failing_audit_blocks_every_write_path() {
        let seeded = || {
            MemoryStore::from_entries(vec![entry("a", "k", "k = 1", 0.3, 0)], ScoringConfig::default()).unwrap()
        };
        let failing = || AuditLog::with_backend(Box::new(FailingBackend::after(0)));

        let mut store = seeded();
        assert!(store.write_entry(MemoryEntry::new("j", "j = 2", 0.5, "op", 1), &open(), &mut failing(), 1).is_err());
        assert_eq!(store.entries(), seeded().entries());

        let mut store = seeded();
        assert!(store.write_entry(MemoryEntry::new("k", "k = 9", 0.9, "op", 1), &open(), &mut failing(), 1).is_err());
        assert_eq!(store.entries(), seeded().entries());

        let mut store = seeded();
        assert!(store.verify_entry("a", &ConstVerifier(Verdict::Fail), &mut failing(), 1).is_err());
        assert_eq!(store.entries(), seeded().entries());

        let mut store = seeded();
        assert!(store.sweep(100, 10, &mut failing()).is_err());
        assert_eq!(store.entries(), seeded().entries());
    }
}

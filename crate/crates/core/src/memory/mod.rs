//! Durable memory whose trust is re-established at retrieval time.
//!
//! Entries carry confidence, verification and access timestamps, provenance
//! and a lifecycle status. Retrieval ranks them by relevance minus a
//! staleness penalty (time since last verification) minus a risk term that
//! grows with the caller's action risk and the entry's doubt.

mod entry;
mod persist;
mod scoring;
mod store;

pub use entry::{ConflictReason, ConflictRecord, EntryStatus, MemoryEntry, MemoryError};
pub use persist::{load_store, save_store, PersistError};
pub use scoring::{staleness, RelevanceModel, ScoringConfig, TokenJaccard};
pub use store::{
    resolve_conflict, Extractor, MemoryQuery, MemoryStore, ProposedFact, RetrievalResult, ScoredId,
    VerificationOutcome, WriteOutcome, CONFLICT_TIE_THRESHOLD, CONSOLIDATION_CONFIDENCE, SWEEP_CONFIDENCE_CEILING,
};

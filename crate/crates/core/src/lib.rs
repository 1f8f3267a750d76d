//! Agent harness runtime.
//!
//! The harness separates a pluggable reasoning substrate from the system
//! around it: a trust-scored memory store, a budgeted context constructor,
//! a skill router with named pre/post-condition checks, a governance layer
//! with a hash-chained audit log, the orchestration loop that ties them
//! together, and an evaluation harness that scores repeated-use behaviour
//! against a drifting environment.
//!
//! All time is logical: callers supply a monotone tick counter, and every
//! component is deterministic given its inputs, so scripted sessions replay
//! byte-for-byte.

pub mod context;
pub mod environment;
pub mod eval;
pub mod governance;
pub mod memory;
pub mod orchestration;
pub mod skills;
pub mod text;

/// Logical timestamp. One tick is one simulated day in the default
/// staleness configuration.
pub type Timestamp = u64;

pub use context::{ContextAssembly, ContextSegment, SegmentKind};
pub use environment::{Environment, EnvironmentVerifier, FactEnvironment, Verdict};
pub use governance::{AuditKind, AuditLog, AuditRecord, PermissionPolicy};
pub use memory::{MemoryEntry, MemoryQuery, MemoryStore, RetrievalResult};
pub use orchestration::{Session, SessionSpec, Trajectory, Turn};
pub use skills::{SkillOutcome, SkillRegistry, SkillSpec};

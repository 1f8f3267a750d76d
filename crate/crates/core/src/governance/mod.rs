//! Permission checks, verification-gated memory writes, the partitioned
//! evolution state, and the hash-chained audit log every state change goes
//! through.

mod audit;
mod evolution;
mod gate;
mod permission;

pub use audit::{
    payload_path_for, read_log, verify_chain, AuditBackend, AuditError, AuditKind, AuditLog,
    AuditRecord, FailingBackend, FileBackend, MemoryBackend, ZERO_DIGEST,
};
pub use evolution::{
    EvolutionChange, EvolutionError, EvolutionState, GuardrailChange, MemoryChange, Partition,
    PartitionName, ReviewConfig, UpdateOutcome, UpdatePolicy,
};
pub use gate::{gate_write, GateDecision, RejectReason, WriteGate};
pub use permission::{
    ClosedChannel, Decision, MatchedBy, OperatorChannel, PermissionPolicy, PolicyRule, Resolution,
    ScriptedOperator,
};

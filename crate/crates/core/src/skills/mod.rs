//! Skills: versioned capabilities with named pre/post-condition checks,
//! a replaceable routing policy, and permission-gated invocation.

mod invoke;
mod registry;
mod route;
mod spec;

pub use invoke::{
    complete, compose, escalate, invoke, prepare, render_result, verify_outcome, EscalationRecord, Invocation, Plan,
    PredicateResult, Prepared, ReadyInvocation, SkillOutcome,
};
pub use registry::{
    builtin_executors, builtin_predicates, Executor, FnExecutor, PostPredicate, PrePredicate, PredicateRegistry,
    RegistryError, SkillRegistry,
};
pub use route::{route, Choice, EscalationReason, RankedSkill, Router, RoutingDecision, RoutingPolicy, TagOverlap};
pub use spec::{SkillError, SkillSpec, Subtask};

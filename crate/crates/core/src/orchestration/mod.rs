//! The control loop: assemble context, ask the substrate for a proposal,
//! route and gate it, execute and verify, and write verified results back to
//! memory. Subagents run the same loop with their own budget, policy and
//! skills, and report back through structured messages.

mod config;
mod message;
mod session;
mod substrate;
mod trajectory;

pub use config::{ConfigError, PinnedSpec, RetrievalSpec, RoleSpec, SessionSpec, SkillsFile, Source, SubstrateBinding};
pub use message::{AgentMessage, Fact, MessageError, MessageKind};
pub use session::{
    Agent, LoopConfig, OrchestrationError, RoleTemplate, Session, SessionParts, SubagentHandle, Task, TaskState,
};
pub use substrate::{
    Action, Condition, ExtractRule, Proposal, ReasoningSubstrate, Rule, Script, ScriptedSubstrate, SubstrateError,
    SubstrateExtractor,
};
pub use trajectory::{
    Answer, Attempt, Counters, RetrievedRef, SubagentRun, TerminalStatus, Trajectory, Turn, TurnOutcome, WriteBack,
};

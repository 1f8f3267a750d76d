use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Map, Value};
use thiserror::Error;

use super::config::{resolve_policy, ConfigError, PinnedSpec, SessionSpec};
use super::message::{AgentMessage, MessageError, MessageKind};
use super::substrate::{Action, ReasoningSubstrate, SubstrateExtractor};
use super::trajectory::{
    Answer, Attempt, Counters, RetrievedRef, SubagentRun, TerminalStatus, Trajectory, Turn, TurnOutcome, WriteBack,
};
use crate::context::{self, assemble, ContextSegment};
use crate::environment::{Environment, EnvironmentVerifier};
use crate::governance::{AuditError, AuditKind, AuditLog, ClosedChannel, OperatorChannel, PermissionPolicy, WriteGate};
use crate::memory::{MemoryEntry, MemoryError, MemoryQuery, MemoryStore, WriteOutcome};
use crate::skills::{
    complete, escalate, prepare, render_result, Choice, Invocation, Prepared, Router, RoutingPolicy, SkillError,
    SkillOutcome, SkillRegistry, TagOverlap,
};
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum OrchestrationError {
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown role {0}")]
    UnknownRole(String),
    #[error("rejected message: {0}")]
    Message(#[from] MessageError),
}

/// Loop parameters for one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub budget: usize,
    pub max_retries: usize,
    pub refresh: bool,
    pub retrieval_k: usize,
    pub max_candidates: usize,
    pub action_risk: f64,
    pub writeback_confidence: f64,
}

/// A task handed to an agent.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Task {
    pub id: String,
    pub text: String,
}

impl Task {
    pub fn new(id: &str, text: &str) -> Self {
        Self {
            id: id.to_string(),
            text: text.to_string(),
        }
    }
}

/// A task in progress: the task plus the tool outputs, failure notes and
/// handoff messages gathered for it so far.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub task: Task,
    pub working: Vec<ContextSegment>,
}

impl TaskState {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            working: Vec::new(),
        }
    }

    fn push_output(&mut self, content: &str, source: &str) {
        let id = format!("out-{:04}", self.working.len() + 1);
        self.working.push(ContextSegment::tool_output(&id, content, source, 1.0));
    }
}

/// One agent's private state. Agents never share stores, policies or
/// registries; they exchange messages only.
pub struct Agent {
    pub role: String,
    pub parent: Option<String>,
    pub substrate: Arc<dyn ReasoningSubstrate>,
    pub registry: SkillRegistry,
    pub policy: PermissionPolicy,
    pub store: MemoryStore,
    pub router: Router,
    pub pinned: Vec<ContextSegment>,
    pub config: LoopConfig,
}

/// How to build a subagent for a role.
pub struct RoleTemplate {
    pub substrate: Arc<dyn ReasoningSubstrate>,
    pub registry: SkillRegistry,
    pub policy: PermissionPolicy,
    pub pinned: Vec<ContextSegment>,
    pub budget: usize,
    pub horizon: usize,
}

/// A dispatched subagent. Only the parent session holds it.
pub struct SubagentHandle {
    agent: Agent,
    task: TaskState,
    horizon: usize,
}

impl SubagentHandle {
    pub fn role(&self) -> &str {
        &self.agent.role
    }

    pub fn budget(&self) -> usize {
        self.agent.config.budget
    }

    pub fn policy(&self) -> &PermissionPolicy {
        &self.agent.policy
    }

    pub fn registry(&self) -> &SkillRegistry {
        &self.agent.registry
    }
}

/// State every agent in a session acts through.
struct Shared {
    session_id: String,
    audit: AuditLog,
    env: Box<dyn Environment>,
    operator: Box<dyn OperatorChannel>,
    clock: Timestamp,
    roles: BTreeMap<String, RoleTemplate>,
    routing: Box<dyn RoutingPolicy>,
}

/// External resources a session runs against.
pub struct SessionParts {
    pub env: Box<dyn Environment>,
    pub operator: Box<dyn OperatorChannel>,
    pub store: MemoryStore,
    pub audit: AuditLog,
    pub clock: Timestamp,
}

impl SessionParts {
    pub fn new(env: impl Environment + 'static) -> Self {
        Self {
            env: Box::new(env),
            operator: Box::new(ClosedChannel),
            store: MemoryStore::default(),
            audit: AuditLog::in_memory(),
            clock: 0,
        }
    }

    pub fn with_operator(mut self, operator: impl OperatorChannel + 'static) -> Self {
        self.operator = Box::new(operator);
        self
    }

    pub fn with_store(mut self, store: MemoryStore) -> Self {
        self.store = store;
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = audit;
        self
    }

    pub fn with_clock(mut self, clock: Timestamp) -> Self {
        self.clock = clock;
        self
    }
}

/// The main agent, its subagent roles, and the shared audit log,
/// environment, operator and logical clock.
pub struct Session {
    main: Agent,
    shared: Shared,
    horizon: usize,
    runs: usize,
}

fn pinned_segments(spec_id: &str, pinned: &[PinnedSpec]) -> Vec<ContextSegment> {
    pinned
        .iter()
        .map(|p| ContextSegment::pinned(&p.id, &p.content, &format!("{spec_id}/pinned/{}", p.id)))
        .collect()
}

impl Session {
    /// Builds a session. Relative paths in `spec` resolve against `base`.
    pub fn build(spec: &SessionSpec, base: &Path, parts: SessionParts) -> Result<Self, ConfigError> {
        spec.validate()?;
        let registry = spec.registry(base)?;
        let mut roles = BTreeMap::new();
        for (name, role) in &spec.roles {
            roles.insert(
                name.clone(),
                RoleTemplate {
                    substrate: Arc::new(role.substrate.build(base)?),
                    registry: registry.subset(role.skills.iter().map(String::as_str))?,
                    policy: resolve_policy(&role.policy, base)?,
                    pinned: pinned_segments(&format!("{}/{name}", spec.id), &role.pinned),
                    budget: role.budget,
                    horizon: role.horizon,
                },
            );
        }
        for skill in registry.specs() {
            if let Some(role) = &skill.subagent {
                if !roles.contains_key(role) {
                    return Err(ConfigError::UnknownRole(role.clone()));
                }
            }
        }
        let scoring = spec.scoring.unwrap_or_default();
        let mut store = parts.store;
        if store.scoring() != &scoring {
            store = MemoryStore::from_entries(store.entries().to_vec(), scoring)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let main = Agent {
            role: "main".to_string(),
            parent: None,
            substrate: Arc::new(spec.substrate.build(base)?),
            registry,
            policy: resolve_policy(&spec.policy, base)?,
            store,
            router: Router::default(),
            pinned: pinned_segments(&spec.id, &spec.pinned),
            config: LoopConfig {
                budget: spec.budget,
                max_retries: spec.max_retries,
                refresh: spec.refresh,
                retrieval_k: spec.retrieval.k,
                max_candidates: spec.retrieval.max_candidates,
                action_risk: spec.retrieval.action_risk,
                writeback_confidence: spec.writeback_confidence,
            },
        };
        Ok(Self {
            main,
            shared: Shared {
                session_id: spec.id.clone(),
                audit: parts.audit,
                env: parts.env,
                operator: parts.operator,
                clock: parts.clock,
                roles,
                routing: Box::new(TagOverlap),
            },
            horizon: spec.horizon,
            runs: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.shared.session_id
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn audit(&self) -> &AuditLog {
        &self.shared.audit
    }

    pub fn store(&self) -> &MemoryStore {
        &self.main.store
    }

    pub fn store_mut_and_audit(&mut self) -> (&mut MemoryStore, &mut AuditLog) {
        (&mut self.main.store, &mut self.shared.audit)
    }

    pub fn env(&self) -> &dyn Environment {
        &*self.shared.env
    }

    pub fn env_mut(&mut self) -> &mut dyn Environment {
        &mut *self.shared.env
    }

    pub fn main_agent(&self) -> &Agent {
        &self.main
    }

    pub fn clock(&self) -> Timestamp {
        self.shared.clock
    }

    pub fn advance_clock(&mut self, ticks: u64) {
        self.shared.clock += ticks;
    }

    pub fn set_operator(&mut self, operator: impl OperatorChannel + 'static) {
        self.shared.operator = Box::new(operator);
    }

    pub fn set_routing_policy(&mut self, policy: impl RoutingPolicy + 'static) {
        self.shared.routing = Box::new(policy);
    }

    /// Consumes the session, returning its store and audit log.
    pub fn into_parts(self) -> (MemoryStore, AuditLog) {
        (self.main.store, self.shared.audit)
    }

    /// One main-agent turn on `task`. Advances the clock by one tick.
    pub fn run_turn(&mut self, task: &mut TaskState, index: usize) -> Result<Turn, OrchestrationError> {
        let turn = run_turn(&mut self.main, &mut self.shared, task, index)?;
        self.shared.clock += 1;
        Ok(turn)
    }

    /// Runs `tasks` in order until all are answered, `horizon` turns are
    /// spent, or a turn escalates; then consolidates the transcript into
    /// memory.
    pub fn run_session(&mut self, tasks: &[Task], horizon: usize) -> Result<Trajectory, OrchestrationError> {
        if horizon == 0 {
            return Err(ConfigError::Invalid("horizon must be positive".into()).into());
        }
        let start = self.shared.audit.next_seq();
        let run = self.runs;
        self.runs += 1;
        let mut turns = Vec::new();
        let mut answers = Vec::new();
        let mut transcript = Vec::new();
        let mut status = TerminalStatus::Solved;

        'tasks: for task in tasks {
            let mut state = TaskState::new(task.clone());
            transcript.push(format!("task {}: {}", task.id, task.text));
            loop {
                if turns.len() >= horizon {
                    status = TerminalStatus::Exhausted;
                    break 'tasks;
                }
                let seen = state.working.len();
                let turn = self.run_turn(&mut state, turns.len())?;
                transcript.extend(state.working[seen..].iter().map(|s| s.content.clone()));
                let outcome = turn.outcome.clone();
                turns.push(turn);
                match outcome {
                    TurnOutcome::Responded { text } => {
                        transcript.push(format!("answer {}: {text}", task.id));
                        answers.push(Answer {
                            task_id: task.id.clone(),
                            text,
                        });
                        continue 'tasks;
                    }
                    TurnOutcome::Escalated { .. } => {
                        status = TerminalStatus::Escalated;
                        break 'tasks;
                    }
                    _ => {}
                }
            }
        }

        let mut consolidated = Vec::new();
        if !transcript.is_empty() {
            let verifier = EnvironmentVerifier::new(&*self.shared.env);
            let gate = WriteGate::with_verifier(&verifier);
            let extractor = SubstrateExtractor(&*self.main.substrate);
            consolidated = self.main.store.consolidate_session(
                &transcript,
                &extractor,
                &format!("{}/run-{run}", self.shared.session_id),
                &gate,
                &mut self.shared.audit,
                self.shared.clock,
            )?;
        }
        Ok(Trajectory {
            session_id: self.shared.session_id.clone(),
            run,
            horizon,
            status,
            answers,
            consolidated,
            audit_range: [start, self.shared.audit.next_seq()],
            turns,
        })
    }

    /// Creates a subagent for `role` with its own context budget (the
    /// role's unless overridden), policy slice, registry subset, empty
    /// memory and turn counter.
    pub fn dispatch_subagent(
        &self,
        role: &str,
        task: Task,
        budget: Option<usize>,
    ) -> Result<SubagentHandle, OrchestrationError> {
        dispatch(&self.shared, &self.main, role, task, budget)
    }

    /// Runs a dispatched subagent to completion and validates the message it
    /// returns. Rejected messages are audited as collaboration failures.
    pub fn run_subagent(&mut self, handle: SubagentHandle) -> Result<SubagentRun, OrchestrationError> {
        run_subagent(&mut self.shared, handle)
    }

    /// Delivers a message into a task's working set as a tool-output
    /// segment. Malformed messages are rejected and audited as collaboration
    /// failures.
    pub fn handoff(&mut self, message: &AgentMessage, task: &mut TaskState) -> Result<(), OrchestrationError> {
        let now = self.shared.clock;
        deliver(&mut self.shared.audit, message, now)?.map_err(OrchestrationError::Message)?;
        task.push_output(&message.render(), &format!("message:{}", message.sender));
        Ok(())
    }
}

fn dispatch(shared: &Shared, parent: &Agent, role: &str, task: Task, budget: Option<usize>) -> Result<SubagentHandle, OrchestrationError> {
    let template = shared
        .roles
        .get(role)
        .ok_or_else(|| OrchestrationError::UnknownRole(role.to_string()))?;
    let agent = Agent {
        role: role.to_string(),
        parent: Some(parent.role.clone()),
        substrate: Arc::clone(&template.substrate),
        registry: template.registry.clone(),
        policy: template.policy.clone(),
        store: MemoryStore::new(*parent.store.scoring()),
        router: Router::default(),
        pinned: template.pinned.clone(),
        config: LoopConfig {
            budget: budget.unwrap_or(template.budget),
            ..parent.config
        },
    };
    Ok(SubagentHandle {
        agent,
        task: TaskState::new(task),
        horizon: template.horizon,
    })
}

/// Validates a message, auditing a collaboration failure if it is
/// malformed. The outer error is an audit failure.
fn deliver(audit: &mut AuditLog, message: &AgentMessage, now: Timestamp) -> Result<Result<(), MessageError>, AuditError> {
    match message.validate() {
        Ok(()) => Ok(Ok(())),
        Err(e) => {
            audit.record(
                AuditKind::CollaborationFailure,
                json!({
                    "op": "handoff",
                    "sender": message.sender,
                    "recipient": message.recipient,
                    "kind": message.kind,
                    "error": e.to_string(),
                }),
                "rejected",
                now,
            )?;
            Ok(Err(e))
        }
    }
}

fn run_subagent(shared: &mut Shared, mut handle: SubagentHandle) -> Result<SubagentRun, OrchestrationError> {
    let mut turns = Vec::new();
    let mut message = None;
    let mut failure = Some("horizon exhausted without a message".to_string());
    for index in 0..handle.horizon {
        let turn = run_turn(&mut handle.agent, shared, &mut handle.task, index)?;
        let outcome = turn.outcome.clone();
        let proposal = turn.attempts.last().and_then(|a| a.proposal.clone());
        turns.push(turn);
        match outcome {
            TurnOutcome::Responded { text } => {
                let Some(Action::Respond {
                    facts,
                    message_kind,
                    uncertainty,
                    ..
                }) = proposal.map(|p| p.action)
                else {
                    unreachable!("responded turns carry a respond proposal");
                };
                let msg = AgentMessage {
                    kind: message_kind.unwrap_or(MessageKind::Handoff),
                    sender: handle.agent.role.clone(),
                    recipient: handle.agent.parent.clone().unwrap_or_default(),
                    facts,
                    uncertainty,
                    text,
                };
                failure = deliver(&mut shared.audit, &msg, shared.clock)?.err().map(|e| e.to_string());
                message = Some(msg);
                break;
            }
            TurnOutcome::Escalated { reason } => {
                failure = Some(format!("escalated: {reason}"));
                break;
            }
            _ => {}
        }
    }
    Ok(SubagentRun {
        role: handle.agent.role.clone(),
        task: handle.task.task.text.clone(),
        budget: handle.agent.config.budget,
        turns,
        message,
        failure,
    })
}

fn message_result(message: &AgentMessage) -> Value {
    let facts: Map<String, Value> = message
        .facts
        .iter()
        .map(|f| (f.key.clone(), Value::String(f.value.clone())))
        .collect();
    let mut result = json!({ "kind": message.kind, "facts": facts });
    if let Some(u) = message.uncertainty {
        result["uncertainty"] = json!(u);
    }
    result
}

fn write_back(
    agent: &mut Agent,
    shared: &mut Shared,
    outcome: &SkillOutcome,
    now: Timestamp,
) -> Result<Vec<WriteBack>, OrchestrationError> {
    let Some(fields) = outcome.result.as_object() else {
        return Ok(Vec::new());
    };
    let verifier = EnvironmentVerifier::new(&*shared.env);
    let gate = WriteGate::from_outcome(outcome, Some(&verifier));
    let provenance = format!("session:{}/{}", shared.session_id, outcome.invocation_id);
    let mut out = Vec::new();
    for (key, value) in fields {
        let Some(value) = value.as_str() else { continue };
        let candidate = MemoryEntry::new(
            key,
            &format!("{key} = {value}"),
            agent.config.writeback_confidence,
            &provenance,
            now,
        );
        let (entry_id, decision) = match agent.store.write_entry(candidate, &gate, &mut shared.audit, now) {
            Ok(written) => {
                let status = agent.store.get(written.id()).expect("just written").status;
                let label = written.label(status).to_string();
                let id = match written {
                    WriteOutcome::Stored { id, .. } | WriteOutcome::Deduplicated { id } => id,
                };
                (Some(id), label)
            }
            Err(MemoryError::GateRejected(reason)) => (None, format!("rejected:{}", reason.as_str())),
            Err(e) => return Err(e.into()),
        };
        out.push(WriteBack {
            scope_key: key.clone(),
            invocation_id: outcome.invocation_id.clone(),
            entry_id,
            decision,
        });
    }
    Ok(out)
}

fn failure_note(outcome: &SkillOutcome) -> String {
    match &outcome.error {
        Some(e) => format!("failure: {} executor failed: {e}", outcome.skill),
        None => format!(
            "failure: {} postcondition failed: {}",
            outcome.skill,
            outcome.failed_postconditions().collect::<Vec<_>>().join(", ")
        ),
    }
}

fn empty_attempt() -> Attempt {
    Attempt {
        retrieved: Vec::new(),
        manifest: Default::default(),
        total_tokens: 0,
        refresh: None,
        proposal: None,
        error: None,
        routing: None,
        invocation: None,
        subagent: None,
        writebacks: Vec::new(),
    }
}

/// assemble → refresh → propose → (route → permission → invoke → verify)
/// → write-back, with re-proposals after failures up to `max_retries`.
fn run_turn(agent: &mut Agent, shared: &mut Shared, task: &mut TaskState, index: usize) -> Result<Turn, OrchestrationError> {
    let now = shared.clock;
    let start = shared.audit.next_seq();
    let origin = agent.parent.as_ref().map(|_| agent.role.clone());
    let mut counters = Counters::default();
    let mut attempts = Vec::new();
    let max_retries = agent.config.max_retries;
    let retry = |counters: &mut Counters| {
        if counters.retries < max_retries {
            counters.retries += 1;
            true
        } else {
            false
        }
    };

    let outcome = loop {
        let mut attempt = empty_attempt();

        let query = MemoryQuery::new(
            &task.task.text,
            agent.config.retrieval_k,
            agent.config.action_risk,
            now,
            agent.config.max_candidates,
        );
        let hits = agent.store.retrieve(&query)?;
        let mut candidates = agent.pinned.clone();
        for hit in &hits.entries {
            let entry = agent.store.get(&hit.id).expect("retrieved entries exist");
            let relevance = agent.store.relevance_model().relevance(&entry.content, &task.task.text);
            let freshness = agent.store.scoring().freshness_at(entry.last_verified_at, now);
            candidates.push(ContextSegment::memory(&entry.id, &entry.content, relevance, freshness));
            attempt.retrieved.push(RetrievedRef {
                entry_id: entry.id.clone(),
                scope_key: entry.scope_key.clone(),
                content: entry.content.clone(),
                score: hit.score,
            });
        }
        candidates.extend(task.working.iter().cloned());

        let mut assembly = match assemble(&task.task.text, &candidates, agent.config.budget) {
            Ok(a) => a,
            Err(e) => {
                attempt.error = Some(e.to_string());
                attempts.push(attempt);
                break TurnOutcome::Failed { error: e.to_string() };
            }
        };
        if agent.config.refresh {
            let verifier = EnvironmentVerifier::new(&*shared.env);
            let (refreshed, report) = context::refresh(&assembly, &mut agent.store, Some(&verifier), &mut shared.audit, now)
                .map_err(|e| match e {
                    context::ContextError::Memory(m) => OrchestrationError::Memory(m),
                    other => OrchestrationError::Config(ConfigError::Invalid(other.to_string())),
                })?;
            counters.verifications += report.verified.len() + report.removed.len() + report.indeterminate.len();
            attempt.refresh = Some(report);
            assembly = refreshed;
        }
        counters.tokens += assembly.total_tokens;
        attempt.total_tokens = assembly.total_tokens;
        attempt.manifest = assembly.manifest.clone();

        let proposal = match agent.substrate.propose(&assembly) {
            Ok(p) => p,
            Err(e) => {
                attempt.error = Some(e.to_string());
                attempts.push(attempt);
                if retry(&mut counters) {
                    continue;
                }
                break TurnOutcome::Failed { error: e.to_string() };
            }
        };
        attempt.proposal = Some(proposal.clone());

        match proposal.action {
            Action::Respond { text, .. } => {
                attempts.push(attempt);
                break TurnOutcome::Responded { text };
            }
            Action::RequestClarification { text } => {
                attempts.push(attempt);
                match shared.operator.clarify(&text) {
                    Some(answer) => {
                        counters.interventions += 1;
                        task.push_output(&format!("clarification: {answer}"), "operator");
                        break TurnOutcome::Clarified { answer };
                    }
                    None => {
                        let reason = crate::skills::EscalationReason::Clarification { question: text };
                        let label = reason.label().to_string();
                        escalate(&task.task.id, reason, origin.as_deref(), &mut shared.audit, now)?;
                        break TurnOutcome::Escalated { reason: label };
                    }
                }
            }
            Action::InvokeSkill { subtask, args } => {
                let (decision, _) = agent.router.route(
                    &subtask,
                    &agent.registry,
                    &*shared.routing,
                    &agent.role,
                    &mut shared.audit,
                    now,
                )?;
                attempt.routing = Some(decision.clone());
                if let Choice::Escalate(reason) = &decision.chosen {
                    escalate(&subtask.id, reason.clone(), origin.as_deref(), &mut shared.audit, now)?;
                    attempts.push(attempt);
                    break TurnOutcome::Escalated {
                        reason: reason.label().to_string(),
                    };
                }
                let prepared = prepare(
                    &decision,
                    &args,
                    &agent.registry,
                    &agent.policy,
                    &mut *shared.operator,
                    &agent.role,
                    &mut shared.audit,
                    now,
                )?;
                let ready = match prepared {
                    Prepared::Stopped(stopped) => {
                        counters.failed_actions += 1;
                        if stopped.resolution().asked {
                            counters.interventions += 1;
                        }
                        let skill = decision.skill().unwrap_or_default();
                        let note = match &stopped {
                            Invocation::Refused { precondition, .. } => {
                                format!("refused: {skill} precondition {precondition} failed")
                            }
                            _ => format!("denied: {skill} is not permitted"),
                        };
                        task.push_output(&note, &format!("permission:{}", stopped.resolution().seq));
                        attempt.invocation = Some(stopped);
                        attempts.push(attempt);
                        break TurnOutcome::Acted { verified: false };
                    }
                    Prepared::Ready(ready) => ready,
                };
                if ready.resolution.asked {
                    counters.interventions += 1;
                }
                counters.tool_calls += 1;
                let spec = ready.spec.clone();
                let mut handoff = None;
                let executed = match &spec.subagent {
                    Some(role) => {
                        let sub_task = Task::new(
                            &format!("{}/{}", task.task.id, subtask.id),
                            args.get("task").and_then(Value::as_str).unwrap_or(&task.task.text),
                        );
                        let handle = dispatch(shared, agent, role, sub_task, None)?;
                        let run = run_subagent(shared, handle)?;
                        let result = match (&run.message, &run.failure) {
                            (Some(m), None) => {
                                handoff = Some(m.render());
                                Ok(message_result(m))
                            }
                            (_, Some(f)) => Err(format!("subagent {role}: {f}")),
                            (None, None) => Err(format!("subagent {role}: no message")),
                        };
                        attempt.subagent = Some(run);
                        result
                    }
                    None => match agent.registry.executor(&spec) {
                        Some(executor) => executor.execute(&args, &mut *shared.env),
                        None => Err(format!("no executor bound for {}", spec.name)),
                    },
                };
                let invocation = complete(
                    ready,
                    &args,
                    executed,
                    &agent.registry,
                    &*shared.env,
                    &agent.role,
                    &mut shared.audit,
                    now,
                )?;
                let outcome = invocation.outcome().expect("completed").clone();
                attempt.invocation = Some(invocation);
                if spec.writeback && spec.subagent.is_none() {
                    attempt.writebacks = write_back(agent, shared, &outcome, now)?;
                }
                if outcome.verified() {
                    let rendered = handoff.unwrap_or_else(|| render_result(&spec.name, &outcome.result));
                    task.push_output(&rendered, &outcome.invocation_id);
                    attempts.push(attempt);
                    break TurnOutcome::Acted { verified: true };
                }
                counters.failed_actions += 1;
                task.push_output(&failure_note(&outcome), &outcome.invocation_id);
                attempts.push(attempt);
                if retry(&mut counters) {
                    continue;
                }
                break TurnOutcome::Acted { verified: false };
            }
        }
    };

    Ok(Turn {
        index,
        agent: agent.role.clone(),
        task_id: task.task.id.clone(),
        ts: now,
        attempts,
        outcome,
        counters,
        audit_range: [start, shared.audit.next_seq()],
    })
}

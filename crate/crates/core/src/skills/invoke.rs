use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::registry::SkillRegistry;
use super::route::{Choice, EscalationReason, RoutingDecision};
use super::spec::{SkillError, SkillSpec};
use crate::environment::Environment;
use crate::governance::{AuditKind, AuditLog, OperatorChannel, PermissionPolicy, Resolution};
use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateResult {
    pub name: String,
    pub passed: bool,
}

/// What one execution produced. `verified` is derived from the recorded
/// postcondition results and is never stored independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "OutcomeRecord", into = "OutcomeRecord")]
pub struct SkillOutcome {
    pub invocation_id: String,
    pub skill: String,
    pub version: u32,
    pub result: Value,
    pub postconditions: Vec<PredicateResult>,
    pub error: Option<String>,
}

impl SkillOutcome {
    /// True when the executor succeeded and every postcondition passed.
    pub fn verified(&self) -> bool {
        self.error.is_none() && self.postconditions.iter().all(|p| p.passed)
    }

    pub fn failed_postconditions(&self) -> impl Iterator<Item = &str> {
        self.postconditions.iter().filter(|p| !p.passed).map(|p| p.name.as_str())
    }
}

#[derive(Serialize, Deserialize)]
struct OutcomeRecord {
    invocation_id: String,
    skill: String,
    version: u32,
    result: Value,
    postconditions: Vec<PredicateResult>,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    verified: bool,
}

impl From<OutcomeRecord> for SkillOutcome {
    fn from(r: OutcomeRecord) -> Self {
        Self {
            invocation_id: r.invocation_id,
            skill: r.skill,
            version: r.version,
            result: r.result,
            postconditions: r.postconditions,
            error: r.error,
        }
    }
}

impl From<SkillOutcome> for OutcomeRecord {
    fn from(o: SkillOutcome) -> Self {
        let verified = o.verified();
        Self {
            invocation_id: o.invocation_id,
            skill: o.skill,
            version: o.version,
            result: o.result,
            postconditions: o.postconditions,
            error: o.error,
            verified,
        }
    }
}

/// An invocation that passed permission and preconditions and may now run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadyInvocation {
    pub spec: SkillSpec,
    pub invocation_id: String,
    pub resolution: Resolution,
}

/// How an invocation ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum Invocation {
    Denied { resolution: Resolution },
    Refused { resolution: Resolution, precondition: String, seq: u64 },
    Completed { resolution: Resolution, outcome: SkillOutcome, seq: u64 },
}

impl Invocation {
    pub fn outcome(&self) -> Option<&SkillOutcome> {
        match self {
            Invocation::Completed { outcome, .. } => Some(outcome),
            _ => None,
        }
    }

    pub fn resolution(&self) -> &Resolution {
        match self {
            Invocation::Denied { resolution }
            | Invocation::Refused { resolution, .. }
            | Invocation::Completed { resolution, .. } => resolution,
        }
    }
}

pub enum Prepared {
    Stopped(Invocation),
    Ready(ReadyInvocation),
}

/// Permission check, then preconditions. Nothing runs here; a
/// [`Prepared::Ready`] result is carried out by the caller and finished
/// with [`complete`].
#[allow(clippy::too_many_arguments)]
pub fn prepare(
    decision: &RoutingDecision,
    args: &Value,
    registry: &SkillRegistry,
    policy: &PermissionPolicy,
    operator: &mut dyn OperatorChannel,
    agent: &str,
    audit: &mut AuditLog,
    now: Timestamp,
) -> Result<Prepared, SkillError> {
    let Choice::Skill { name, version } = &decision.chosen else {
        return Err(SkillError::Escalated);
    };
    let spec = registry
        .get(name)
        .filter(|s| s.version == *version)
        .ok_or_else(|| SkillError::UnknownSkill(format!("{name}@{version}")))?;

    let resolution = policy.check_permission(name, agent, operator, audit, now)?;
    if !resolution.allowed {
        return Ok(Prepared::Stopped(Invocation::Denied { resolution }));
    }
    if let Some(failed) = spec.preconditions.iter().find(|p| !registry.predicates().check_pre(p, args)) {
        let seq = audit.record(
            AuditKind::ToolInvocation,
            json!({
                "op": "refuse",
                "agent": agent,
                "skill": spec.name,
                "version": spec.version,
                "precondition": failed,
                "permission_seq": resolution.seq,
            }),
            "refused",
            now,
        )?;
        return Ok(Prepared::Stopped(Invocation::Refused {
            resolution,
            precondition: failed.clone(),
            seq,
        }));
    }
    Ok(Prepared::Ready(ReadyInvocation {
        invocation_id: format!("inv-{}", resolution.seq),
        spec: spec.clone(),
        resolution,
    }))
}

/// Evaluates postconditions on an execution result and audits the
/// invocation. An executor error yields an empty result that is not
/// verified.
#[allow(clippy::too_many_arguments)]
pub fn complete(
    ready: ReadyInvocation,
    args: &Value,
    executed: Result<Value, String>,
    registry: &SkillRegistry,
    env: &dyn Environment,
    agent: &str,
    audit: &mut AuditLog,
    now: Timestamp,
) -> Result<Invocation, SkillError> {
    let spec = &ready.spec;
    let (result, error) = match executed {
        Ok(result) => (result, None),
        Err(e) => (json!({}), Some(e)),
    };
    let postconditions = if error.is_some() {
        Vec::new()
    } else {
        spec.postconditions
            .iter()
            .map(|name| PredicateResult {
                name: name.clone(),
                passed: registry.predicates().check_post(name, args, &result, env),
            })
            .collect()
    };
    let outcome = SkillOutcome {
        invocation_id: ready.invocation_id.clone(),
        skill: spec.name.clone(),
        version: spec.version,
        result,
        postconditions,
        error,
    };
    let label = match (&outcome.error, outcome.verified()) {
        (Some(_), _) => "executor-failed",
        (None, true) => "verified",
        (None, false) => "unverified",
    };
    let seq = audit.record(
        AuditKind::ToolInvocation,
        json!({
            "op": "invoke",
            "agent": agent,
            "skill": spec.name,
            "version": spec.version,
            "invocation_id": outcome.invocation_id,
            "permission_seq": ready.resolution.seq,
            "args": args,
            "result": outcome.result,
            "postconditions": outcome.postconditions,
            "error": outcome.error,
            "verified": outcome.verified(),
        }),
        label,
        now,
    )?;
    Ok(Invocation::Completed {
        resolution: ready.resolution,
        outcome,
        seq,
    })
}

/// Permission, preconditions, execution with the bound executor, and
/// postcondition checks in one call. Subagent skills must be carried out
/// by the orchestrator via [`prepare`] and [`complete`] instead.
#[allow(clippy::too_many_arguments)]
pub fn invoke(
    decision: &RoutingDecision,
    args: &Value,
    registry: &SkillRegistry,
    policy: &PermissionPolicy,
    operator: &mut dyn OperatorChannel,
    env: &mut dyn Environment,
    agent: &str,
    audit: &mut AuditLog,
    now: Timestamp,
) -> Result<Invocation, SkillError> {
    let ready = match prepare(decision, args, registry, policy, operator, agent, audit, now)? {
        Prepared::Stopped(stopped) => return Ok(stopped),
        Prepared::Ready(ready) => ready,
    };
    let executed = match registry.executor(&ready.spec) {
        Some(executor) => executor.execute(args, env),
        None => Err(format!("no executor bound for {}", ready.spec.name)),
    };
    complete(ready, args, executed, registry, env, agent, audit, now)
}

/// Pass iff every postcondition passed. An outcome produced by another
/// version of the skill is an error.
pub fn verify_outcome(outcome: &SkillOutcome, spec: &SkillSpec) -> Result<bool, SkillError> {
    if outcome.skill != spec.name || outcome.version != spec.version {
        return Err(SkillError::VersionMismatch {
            skill: spec.name.clone(),
            outcome: outcome.version,
            spec: spec.version,
        });
    }
    Ok(outcome.verified())
}

/// A pipeline whose condition names chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<String>,
}

/// Accepts a pipeline iff each step's precondition names are all among the
/// previous step's postcondition names.
pub fn compose(pipeline: &[SkillSpec]) -> Result<Plan, SkillError> {
    if pipeline.is_empty() {
        return Err(SkillError::EmptyPipeline);
    }
    for (i, pair) in pipeline.windows(2).enumerate() {
        let established: BTreeSet<&str> = pair[0].postconditions.iter().map(String::as_str).collect();
        if let Some(missing) = pair[1].preconditions.iter().find(|p| !established.contains(p.as_str())) {
            return Err(SkillError::MissingPrecondition {
                step: i + 1,
                skill: pair[1].name.clone(),
                missing: missing.clone(),
            });
        }
    }
    Ok(Plan {
        steps: pipeline.iter().map(|s| format!("{}@{}", s.name, s.version)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationRecord {
    pub subtask_id: String,
    pub reason: EscalationReason,
    /// Subagent role the escalation came from, if any.
    pub origin: Option<String>,
    pub seq: u64,
}

/// Records an escalation. Escalations raised by a subagent are
/// collaboration failures; the rest are routing changes.
pub fn escalate(
    subtask_id: &str,
    reason: EscalationReason,
    origin: Option<&str>,
    audit: &mut AuditLog,
    now: Timestamp,
) -> Result<EscalationRecord, SkillError> {
    let kind = if origin.is_some() {
        AuditKind::CollaborationFailure
    } else {
        AuditKind::RoutingChange
    };
    let seq = audit.record(
        kind,
        json!({ "op": "escalate", "subtask_id": subtask_id, "origin": origin, "reason": reason }),
        &format!("escalated:{}", reason.label()),
        now,
    )?;
    Ok(EscalationRecord {
        subtask_id: subtask_id.to_string(),
        reason,
        origin: origin.map(String::from),
        seq,
    })
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `<skill> result: field = value ; ...` with fields in key order.
pub fn render_result(skill: &str, result: &Value) -> String {
    let body = match result.as_object() {
        Some(fields) if !fields.is_empty() => fields
            .iter()
            .map(|(k, v)| format!("{k} = {}", render_value(v)))
            .collect::<Vec<_>>()
            .join(" ; "),
        Some(_) => "(empty)".to_string(),
        None => render_value(result),
    };
    format!("{skill} result: {body}")
}

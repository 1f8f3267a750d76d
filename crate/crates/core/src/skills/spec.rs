use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::governance::AuditError;

/// A registered capability.
///
/// Conditions are referenced by name and resolved against the predicate
/// registry when the skill is loaded. `executor` defaults to the skill name.
/// A skill with `subagent` set is carried out by dispatching that role
/// instead of running an executor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillSpec {
    pub name: String,
    pub version: u32,
    pub capability_tags: BTreeSet<String>,
    #[serde(default)]
    pub preconditions: Vec<String>,
    #[serde(default)]
    pub postconditions: Vec<String>,
    #[serde(default)]
    pub cost_estimate: f64,
    #[serde(default)]
    pub min_route_confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subagent: Option<String>,
    /// Verified results of this skill are offered to memory as facts.
    #[serde(default)]
    pub writeback: bool,
}

impl SkillSpec {
    pub fn new<'a>(name: &str, version: u32, tags: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            name: name.to_string(),
            version,
            capability_tags: tags.into_iter().map(String::from).collect(),
            preconditions: Vec::new(),
            postconditions: Vec::new(),
            cost_estimate: 0.0,
            min_route_confidence: 0.0,
            executor: None,
            subagent: None,
            writeback: false,
        }
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost_estimate = cost;
        self
    }

    pub fn with_threshold(mut self, min_route_confidence: f64) -> Self {
        self.min_route_confidence = min_route_confidence;
        self
    }

    pub fn with_preconditions<'a>(mut self, names: impl IntoIterator<Item = &'a str>) -> Self {
        self.preconditions = names.into_iter().map(String::from).collect();
        self
    }

    pub fn with_postconditions<'a>(mut self, names: impl IntoIterator<Item = &'a str>) -> Self {
        self.postconditions = names.into_iter().map(String::from).collect();
        self
    }

    pub fn with_executor(mut self, executor: &str) -> Self {
        self.executor = Some(executor.to_string());
        self
    }

    pub fn with_subagent(mut self, role: &str) -> Self {
        self.subagent = Some(role.to_string());
        self
    }

    pub fn with_writeback(mut self) -> Self {
        self.writeback = true;
        self
    }

    pub fn executor_name(&self) -> &str {
        self.executor.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<(), SkillError> {
        let bad = |msg: &str| Err(SkillError::InvalidSpec(format!("{}: {msg}", self.name)));
        if self.name.is_empty() {
            return Err(SkillError::InvalidSpec("skill without name".into()));
        }
        if self.capability_tags.is_empty() {
            return bad("capability_tags must be nonempty");
        }
        if !(self.cost_estimate >= 0.0 && self.cost_estimate.is_finite()) {
            return bad("cost_estimate must be a nonnegative number");
        }
        if !(0.0..=1.0).contains(&self.min_route_confidence) {
            return bad("min_route_confidence outside [0,1]");
        }
        Ok(())
    }
}

/// A unit of work to route, described by the capabilities it needs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Subtask {
    pub id: String,
    pub tags: BTreeSet<String>,
}

impl Subtask {
    pub fn new<'a>(id: &str, tags: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            id: id.to_string(),
            tags: tags.into_iter().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("invalid skill spec: {0}")]
    InvalidSpec(String),
    #[error("unknown skill {0}")]
    UnknownSkill(String),
    #[error("cannot invoke an escalation decision")]
    Escalated,
    #[error("outcome of {skill} v{outcome} checked against spec v{spec}")]
    VersionMismatch { skill: String, outcome: u32, spec: u32 },
    #[error("empty pipeline")]
    EmptyPipeline,
    #[error("step {step} ({skill}) needs precondition {missing} that the previous step does not establish")]
    MissingPrecondition { step: usize, skill: String, missing: String },
    #[error(transparent)]
    Audit(#[from] AuditError),
}

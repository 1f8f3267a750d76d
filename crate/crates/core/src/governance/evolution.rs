//! What persists, and how it may change: memory, skills, preferences and
//! guardrails live in separate partitions, each with its own update policy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{AuditError, AuditKind, AuditLog, Decision, PermissionPolicy, PolicyRule};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdatePolicy {
    Online,
    ReviewRequired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionName {
    Memory,
    Skills,
    Preferences,
    Guardrails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition<T> {
    pub policy: UpdatePolicy,
    pub items: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op")]
pub enum MemoryChange {
    Add { id: String },
    Remove { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op")]
pub enum GuardrailChange {
    SetRule { pattern: String, decision: Decision },
    RemoveRule { pattern: String },
    SetDefault { decision: Decision },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "partition")]
pub enum EvolutionChange {
    Memory(MemoryChange),
    Skill { name: String, version: u32 },
    Preference { key: String, value: String },
    Guardrail(GuardrailChange),
}

impl EvolutionChange {
    pub fn partition(&self) -> PartitionName {
        match self {
            EvolutionChange::Memory(_) => PartitionName::Memory,
            EvolutionChange::Skill { .. } => PartitionName::Skills,
            EvolutionChange::Preference { .. } => PartitionName::Preferences,
            EvolutionChange::Guardrail(_) => PartitionName::Guardrails,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "reason")]
pub enum UpdateOutcome {
    Applied,
    Refused(String),
}

/// The configured review token. Any nonempty token equal to it is valid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewConfig {
    pub token: String,
}

impl ReviewConfig {
    pub fn accepts(&self, presented: Option<&str>) -> bool {
        matches!(presented, Some(t) if !t.is_empty() && t == self.token)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvolutionError {
    #[error("guardrails partition must stay review-required")]
    GuardrailsMustBeReviewed,
    #[error("change targets {0:?}, not guardrails")]
    NotAGuardrailChange(PartitionName),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    memory: Partition<BTreeSet<String>>,
    skills: Partition<BTreeMap<String, u32>>,
    preferences: Partition<BTreeMap<String, String>>,
    guardrails: Partition<PermissionPolicy>,
}

impl Default for EvolutionState {
    fn default() -> Self {
        Self::new(PermissionPolicy::default())
    }
}

impl EvolutionState {
    pub fn new(guardrails: PermissionPolicy) -> Self {
        Self {
            memory: Partition { policy: UpdatePolicy::Online, items: BTreeSet::new() },
            skills: Partition { policy: UpdatePolicy::ReviewRequired, items: BTreeMap::new() },
            preferences: Partition { policy: UpdatePolicy::Online, items: BTreeMap::new() },
            guardrails: Partition { policy: UpdatePolicy::ReviewRequired, items: guardrails },
        }
    }

    pub fn memory(&self) -> &Partition<BTreeSet<String>> {
        &self.memory
    }

    pub fn skills(&self) -> &Partition<BTreeMap<String, u32>> {
        &self.skills
    }

    pub fn preferences(&self) -> &Partition<BTreeMap<String, String>> {
        &self.preferences
    }

    pub fn guardrails(&self) -> &Partition<PermissionPolicy> {
        &self.guardrails
    }

    pub fn policy_of(&self, partition: PartitionName) -> UpdatePolicy {
        match partition {
            PartitionName::Memory => self.memory.policy,
            PartitionName::Skills => self.skills.policy,
            PartitionName::Preferences => self.preferences.policy,
            PartitionName::Guardrails => self.guardrails.policy,
        }
    }

    pub fn set_update_policy(
        &mut self,
        partition: PartitionName,
        policy: UpdatePolicy,
    ) -> Result<(), EvolutionError> {
        match partition {
            PartitionName::Memory => self.memory.policy = policy,
            PartitionName::Skills => self.skills.policy = policy,
            PartitionName::Preferences => self.preferences.policy = policy,
            PartitionName::Guardrails if policy == UpdatePolicy::ReviewRequired => {}
            PartitionName::Guardrails => return Err(EvolutionError::GuardrailsMustBeReviewed),
        }
        Ok(())
    }

    /// Applies `change` to its own partition if the partition's update policy
    /// allows it. Every attempt, applied or refused, is audited; nothing
    /// changes if the audit append fails.
    pub fn apply(
        &mut self,
        change: &EvolutionChange,
        review_token: Option<&str>,
        review: &ReviewConfig,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<UpdateOutcome, AuditError> {
        let partition = change.partition();
        let outcome = if self.policy_of(partition) == UpdatePolicy::ReviewRequired
            && !review.accepts(review_token)
        {
            UpdateOutcome::Refused(if review_token.is_some() {
                "invalid-review-token".into()
            } else {
                "missing-review-token".into()
            })
        } else {
            self.check_change(change)
        };
        let kind = match partition {
            PartitionName::Memory | PartitionName::Preferences => AuditKind::MemoryWrite,
            PartitionName::Skills => AuditKind::RoutingChange,
            PartitionName::Guardrails => AuditKind::GuardrailChange,
        };
        let label = match &outcome {
            UpdateOutcome::Applied => "applied".to_string(),
            UpdateOutcome::Refused(reason) => format!("refused:{reason}"),
        };
        audit.record(
            kind,
            json!({ "op": "evolution", "change": change, "reviewed": review_token.is_some() }),
            &label,
            now,
        )?;
        if outcome == UpdateOutcome::Applied {
            self.commit(change);
        }
        Ok(outcome)
    }

    /// Guardrail-only entry point: the change must target the guardrails
    /// partition and carry a valid review token.
    pub fn update_guardrails(
        &mut self,
        change: GuardrailChange,
        review_token: Option<&str>,
        review: &ReviewConfig,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<UpdateOutcome, AuditError> {
        self.apply(&EvolutionChange::Guardrail(change), review_token, review, audit, now)
    }

    fn check_change(&self, change: &EvolutionChange) -> UpdateOutcome {
        match change {
            EvolutionChange::Skill { name, version } => match self.skills.items.get(name) {
                Some(current) if version <= current => {
                    UpdateOutcome::Refused(format!("version {version} does not exceed {current}"))
                }
                _ => UpdateOutcome::Applied,
            },
            _ => UpdateOutcome::Applied,
        }
    }

    fn commit(&mut self, change: &EvolutionChange) {
        match change {
            EvolutionChange::Memory(MemoryChange::Add { id }) => {
                self.memory.items.insert(id.clone());
            }
            EvolutionChange::Memory(MemoryChange::Remove { id }) => {
                self.memory.items.remove(id);
            }
            EvolutionChange::Skill { name, version } => {
                self.skills.items.insert(name.clone(), *version);
            }
            EvolutionChange::Preference { key, value } => {
                self.preferences.items.insert(key.clone(), value.clone());
            }
            EvolutionChange::Guardrail(g) => {
                let rules = &mut self.guardrails.items;
                match g {
                    GuardrailChange::SetRule { pattern, decision } => {
                        match rules.rules.iter_mut().find(|r| &r.pattern == pattern) {
                            Some(rule) => rule.decision = *decision,
                            None => rules.rules.push(PolicyRule::new(pattern, *decision)),
                        }
                    }
                    GuardrailChange::RemoveRule { pattern } => rules.rules.retain(|r| &r.pattern != pattern),
                    GuardrailChange::SetDefault { decision } => rules.default = *decision,
                }
            }
        }
    }
}

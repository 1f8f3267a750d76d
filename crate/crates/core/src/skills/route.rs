use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::registry::SkillRegistry;
use super::spec::{SkillError, SkillSpec, Subtask};
use crate::governance::{AuditKind, AuditLog};
use crate::Timestamp;

/// Scores how well a skill matches a subtask, in `[0,1]`.
pub trait RoutingPolicy {
    fn name(&self) -> &str;
    fn score(&self, subtask: &Subtask, spec: &SkillSpec) -> f64;
}

/// `|subtask.tags ∩ capability_tags| / |subtask.tags|`; an untagged
/// subtask matches nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct TagOverlap;

impl RoutingPolicy for TagOverlap {
    fn name(&self) -> &str {
        "tag-overlap"
    }

    fn score(&self, subtask: &Subtask, spec: &SkillSpec) -> f64 {
        if subtask.tags.is_empty() {
            return 0.0;
        }
        let shared = subtask.tags.intersection(&spec.capability_tags).count();
        shared as f64 / subtask.tags.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSkill {
    pub name: String,
    pub version: u32,
    pub score: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason")]
pub enum EscalationReason {
    NoSkill,
    LowConfidence { skill: String, best_score: f64, threshold: f64 },
    Denied { action: String },
    Clarification { question: String },
    Unverified { skill: String },
    Subagent { role: String, detail: String },
    Substrate { detail: String },
}

impl EscalationReason {
    pub fn label(&self) -> &'static str {
        match self {
            EscalationReason::NoSkill => "no-skill",
            EscalationReason::LowConfidence { .. } => "low-confidence",
            EscalationReason::Denied { .. } => "denied",
            EscalationReason::Clarification { .. } => "clarification-unanswered",
            EscalationReason::Unverified { .. } => "unverified",
            EscalationReason::Subagent { .. } => "subagent-failure",
            EscalationReason::Substrate { .. } => "substrate-error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Choice {
    Skill { name: String, version: u32 },
    Escalate(EscalationReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub subtask_id: String,
    pub chosen: Choice,
    pub match_score: f64,
    /// Every other candidate, best first. On escalation this includes the
    /// best candidate too.
    pub alternatives: Vec<RankedSkill>,
}

impl RoutingDecision {
    pub fn is_escalation(&self) -> bool {
        matches!(self.chosen, Choice::Escalate(_))
    }

    pub fn skill(&self) -> Option<&str> {
        match &self.chosen {
            Choice::Skill { name, .. } => Some(name),
            Choice::Escalate(_) => None,
        }
    }

    /// Short comparable form: `name@version` or `escalate:<reason>`.
    pub fn key(&self) -> String {
        match &self.chosen {
            Choice::Skill { name, version } => format!("{name}@{version}"),
            Choice::Escalate(reason) => format!("escalate:{}", reason.label()),
        }
    }
}

fn rank(a: &RankedSkill, b: &RankedSkill) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.cost.total_cmp(&b.cost))
        .then_with(|| a.name.cmp(&b.name))
}

/// Picks the best-scoring skill (ties: cheaper, then name order), or
/// escalates when the registry is empty or the winner's score is below its
/// own `min_route_confidence`.
pub fn route(subtask: &Subtask, registry: &SkillRegistry, policy: &dyn RoutingPolicy) -> RoutingDecision {
    let mut ranked: Vec<RankedSkill> = registry
        .specs()
        .map(|spec| RankedSkill {
            name: spec.name.clone(),
            version: spec.version,
            score: policy.score(subtask, spec).clamp(0.0, 1.0),
            cost: spec.cost_estimate,
        })
        .collect();
    ranked.sort_by(rank);

    // A skill sharing nothing with the subtask is not a candidate at any
    // threshold.
    let Some(best) = ranked.first().filter(|b| b.score > 0.0).cloned() else {
        return RoutingDecision {
            subtask_id: subtask.id.clone(),
            chosen: Choice::Escalate(EscalationReason::NoSkill),
            match_score: 0.0,
            alternatives: ranked,
        };
    };
    let threshold = registry.get(&best.name).map_or(0.0, |s| s.min_route_confidence);
    if best.score < threshold {
        return RoutingDecision {
            subtask_id: subtask.id.clone(),
            chosen: Choice::Escalate(EscalationReason::LowConfidence {
                skill: best.name.clone(),
                best_score: best.score,
                threshold,
            }),
            match_score: best.score,
            alternatives: ranked,
        };
    }
    RoutingDecision {
        subtask_id: subtask.id.clone(),
        chosen: Choice::Skill {
            name: best.name.clone(),
            version: best.version,
        },
        match_score: best.score,
        alternatives: ranked.into_iter().skip(1).collect(),
    }
}

/// Routes and remembers the last decision per subtask tag-set, auditing a
/// routing-change whenever it differs (the first decision for a tag-set
/// counts as a change).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Router {
    previous: BTreeMap<String, String>,
}

impl Router {
    fn tag_key(tags: &BTreeSet<String>) -> String {
        tags.iter().cloned().collect::<Vec<_>>().join(",")
    }

    pub fn route(
        &mut self,
        subtask: &Subtask,
        registry: &SkillRegistry,
        policy: &dyn RoutingPolicy,
        agent: &str,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<(RoutingDecision, Option<u64>), SkillError> {
        let decision = route(subtask, registry, policy);
        let tag_key = Self::tag_key(&subtask.tags);
        let key = decision.key();
        let previous = self.previous.get(&tag_key);
        if previous == Some(&key) {
            return Ok((decision, None));
        }
        let seq = audit.record(
            AuditKind::RoutingChange,
            json!({
                "op": "route",
                "agent": agent,
                "policy": policy.name(),
                "tags": subtask.tags,
                "previous": previous,
                "decision": decision,
            }),
            &key,
            now,
        )?;
        self.previous.insert(tag_key, key);
        Ok((decision, Some(seq)))
    }
}

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AuditError, AuditKind, AuditLog};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Allow,
    Deny,
    Ask,
}

impl Decision {
    fn as_str(self) -> &'static str {
        match self {
            Decision::Allow => "allow",
            Decision::Deny => "deny",
            Decision::Ask => "ask",
        }
    }
}

/// `pattern` is either an exact action name or a prefix ending in `*`
/// (`fs.*`, or `*` for everything).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub pattern: String,
    pub decision: Decision,
}

impl PolicyRule {
    pub fn new(pattern: &str, decision: Decision) -> Self {
        Self {
            pattern: pattern.to_string(),
            decision,
        }
    }

    /// Specificity of a match: exact matches outrank every wildcard, longer
    /// prefixes outrank shorter ones.
    fn specificity(&self, action: &str) -> Option<usize> {
        match self.pattern.strip_suffix('*') {
            Some(prefix) if action.starts_with(prefix) => Some(prefix.len()),
            Some(_) => None,
            None if self.pattern == action => Some(usize::MAX),
            None => None,
        }
    }
}

fn deny() -> Decision {
    Decision::Deny
}

/// Ordered rules plus a default. The most specific matching pattern wins;
/// among equally specific patterns the earliest rule wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionPolicy {
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
    #[serde(default = "deny")]
    pub default: Decision,
}

impl Default for PermissionPolicy {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            default: Decision::Deny,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "by", content = "pattern")]
pub enum MatchedBy {
    Rule(String),
    Default,
}

/// Final outcome of a permission check. `asked` records whether the
/// operator was consulted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub action: String,
    pub allowed: bool,
    pub matched: MatchedBy,
    pub asked: bool,
    pub seq: u64,
}

/// Answers `ask` prompts and clarification requests. `None` means the
/// channel is closed.
pub trait OperatorChannel {
    fn ask(&mut self, action: &str) -> Option<bool>;
    fn clarify(&mut self, _question: &str) -> Option<String> {
        None
    }
}

/// Always closed: every `ask` resolves to deny.
#[derive(Debug, Default, Clone, Copy)]
pub struct ClosedChannel;

impl OperatorChannel for ClosedChannel {
    fn ask(&mut self, _action: &str) -> Option<bool> {
        None
    }
}

/// Replays queued answers, then behaves as closed.
#[derive(Debug, Default, Clone)]
pub struct ScriptedOperator {
    answers: VecDeque<bool>,
    clarifications: VecDeque<String>,
}

impl ScriptedOperator {
    pub fn new(answers: impl IntoIterator<Item = bool>) -> Self {
        Self {
            answers: answers.into_iter().collect(),
            clarifications: VecDeque::new(),
        }
    }

    pub fn with_clarifications(mut self, replies: impl IntoIterator<Item = String>) -> Self {
        self.clarifications = replies.into_iter().collect();
        self
    }
}

impl OperatorChannel for ScriptedOperator {
    fn ask(&mut self, _action: &str) -> Option<bool> {
        self.answers.pop_front()
    }

    fn clarify(&mut self, _question: &str) -> Option<String> {
        self.clarifications.pop_front()
    }
}

impl PermissionPolicy {
    pub fn deny_all() -> Self {
        Self::default()
    }

    pub fn new(rules: Vec<PolicyRule>, default: Decision) -> Self {
        Self { rules, default }
    }

    /// Static lookup, without consulting an operator.
    pub fn lookup(&self, action: &str) -> (Decision, MatchedBy) {
        let mut best: Option<(usize, &PolicyRule)> = None;
        for rule in &self.rules {
            if let Some(score) = rule.specificity(action) {
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, rule));
                }
            }
        }
        match best {
            Some((_, rule)) => (rule.decision, MatchedBy::Rule(rule.pattern.clone())),
            None => (self.default, MatchedBy::Default),
        }
    }

    /// Resolves `action` for `agent`, consulting the operator on `ask`, and
    /// audits the resolution as a tool-invocation record.
    pub fn check_permission(
        &self,
        action: &str,
        agent: &str,
        operator: &mut dyn OperatorChannel,
        audit: &mut AuditLog,
        now: Timestamp,
    ) -> Result<Resolution, AuditError> {
        let (decision, matched) = self.lookup(action);
        let (allowed, asked) = match decision {
            Decision::Allow => (true, false),
            Decision::Deny => (false, false),
            Decision::Ask => (operator.ask(action).unwrap_or(false), true),
        };
        let outcome = if allowed { "allow" } else { "deny" };
        let payload = json!({
            "op": "permission",
            "agent": agent,
            "action": action,
            "policy_decision": decision.as_str(),
            "matched": matched,
            "asked": asked,
            "allowed": allowed,
        });
        let seq = audit.record(AuditKind::ToolInvocation, payload, outcome, now)?;
        Ok(Resolution {
            action: action.to_string(),
            allowed,
            matched,
            asked,
            seq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(policy: &PermissionPolicy, action: &str, operator: &mut dyn OperatorChannel) -> Resolution {
        let mut audit = AuditLog::in_memory();
        let r = policy.check_permission(action, "main", operator, &mut audit, 0).unwrap();
        assert_eq!(audit.len(), 1);
        r
    }

    #[test]
    fn unlisted_action_hits_default_deny() {
        let r = check(&PermissionPolicy::deny_all(), "fs.read", &mut ClosedChannel);
        assert!(!r.allowed);
        assert_eq!(r.matched, MatchedBy::Default);
    }

    #[test]
    fn wildcard_allows_prefix() {
        let policy = PermissionPolicy::new(vec![PolicyRule::new("fs.*", Decision::Allow)], Decision::Deny);
        assert!(check(&policy, "fs.read", &mut ClosedChannel).allowed);
        assert!(!check(&policy, "net.get", &mut ClosedChannel).allowed);
    }

    #[test]
    fn exact_rule_beats_wildcard_and_operator_can_refuse() {
        let policy = PermissionPolicy::new(
            vec![PolicyRule::new("fs.*", Decision::Allow), PolicyRule::new("fs.delete", Decision::Ask)],
            Decision::Deny,
        );
        let mut operator = ScriptedOperator::new([false]);
        let mut audit = AuditLog::in_memory();
        let r = policy.check_permission("fs.delete", "main", &mut operator, &mut audit, 3).unwrap();
        assert!(!r.allowed);
        assert!(r.asked);
        assert_eq!(audit.records()[0].outcome, "deny");
        assert_eq!(audit.payload(&audit.records()[0]).unwrap()["policy_decision"], "ask");
    }

    #[test]
    fn longer_prefix_wins() {
        let policy = PermissionPolicy::new(
            vec![PolicyRule::new("*", Decision::Allow), PolicyRule::new("fs.*", Decision::Deny)],
            Decision::Deny,
        );
        assert_eq!(policy.lookup("fs.read").0, Decision::Deny);
        assert_eq!(policy.lookup("lookup").0, Decision::Allow);
    }

    #[test]
    fn closed_channel_during_ask_denies() {
        let policy = PermissionPolicy::new(vec![PolicyRule::new("x", Decision::Ask)], Decision::Allow);
        assert!(!check(&policy, "x", &mut ClosedChannel).allowed);
        assert!(check(&policy, "x", &mut ScriptedOperator::new([true])).allowed);
    }

    #[test]
    fn policy_file_shape() {
        let policy: PermissionPolicy =
            serde_json::from_str(r#"{"rules":[{"pattern":"fs.*","decision":"allow"}]}"#).unwrap();
        assert_eq!(policy.default, Decision::Deny);
        assert_eq!(policy.rules.len(), 1);
    }
}

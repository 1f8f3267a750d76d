use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::message::{Fact, MessageKind};
use crate::context::{ContextAssembly, SegmentKind};
use crate::memory::{Extractor, ProposedFact};
use crate::skills::Subtask;
use crate::text::tokens;

/// What the substrate wants to happen next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Action {
    InvokeSkill {
        subtask: Subtask,
        #[serde(default)]
        args: Value,
    },
    Respond {
        text: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        facts: Vec<Fact>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message_kind: Option<MessageKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        uncertainty: Option<f64>,
    },
    RequestClarification {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub action: Action,
    pub stated_confidence: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubstrateError {
    #[error("no rule matched the context")]
    NoMatch,
    #[error("no value for {0} in the context")]
    Unresolved(String),
    #[error("cannot load script {path}: {message}")]
    Load { path: String, message: String },
    #[error("substrate unsupported: {0}")]
    Unsupported(String),
}

/// The reasoning model behind the harness. `propose` must not touch harness
/// state; everything it knows comes from the assembly.
pub trait ReasoningSubstrate {
    fn name(&self) -> &str;
    fn propose(&self, assembly: &ContextAssembly) -> Result<Proposal, SubstrateError>;
    /// Durable facts worth keeping from a finished session.
    fn extract(&self, _transcript: &[String]) -> Vec<ProposedFact> {
        Vec::new()
    }
}

/// Lets a substrate act as the memory extractor at session end.
pub struct SubstrateExtractor<'a>(pub &'a dyn ReasoningSubstrate);

impl Extractor for SubstrateExtractor<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn extract(&self, transcript: &[String]) -> Vec<ProposedFact> {
        self.0.extract(transcript)
    }
}

/// A test over the assembled context. All substring matches are
/// case-sensitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    /// Some segment contains the text.
    Contains(String),
    /// No segment contains the text.
    Absent(String),
    TaskContains(String),
    /// Some segment of the kind contains the text.
    Segment { kind: SegmentKind, contains: String },
    /// No segment of the kind contains the text.
    NoSegment { kind: SegmentKind, contains: String },
}

impl Condition {
    fn holds(&self, assembly: &ContextAssembly) -> bool {
        let any = |kind: Option<SegmentKind>, needle: &str| {
            assembly
                .segments
                .iter()
                .any(|s| kind.is_none_or(|k| s.kind == k) && s.content.contains(needle))
        };
        match self {
            Condition::Contains(t) => any(None, t),
            Condition::Absent(t) => !any(None, t),
            Condition::TaskContains(t) => any(Some(SegmentKind::Task), t),
            Condition::Segment { kind, contains } => any(Some(*kind), contains),
            Condition::NoSegment { kind, contains } => !any(Some(*kind), contains),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default)]
    pub when: Vec<Condition>,
    pub then: Action,
    #[serde(default = "one")]
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractRule {
    pub when_contains: String,
    pub scope_key: String,
    pub content: String,
}

/// Rule script for [`ScriptedSubstrate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub name: Option<String>,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub extract: Vec<ExtractRule>,
}

/// Deterministic substrate driven by a rule list: the first rule whose
/// conditions all hold supplies the proposal.
///
/// Strings in the chosen action may use `{value:KEY}`, replaced by the token
/// following `KEY =` in the context. Tool outputs are searched newest first,
/// then retrieved memory in context order, then everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedSubstrate {
    name: String,
    script: Script,
}

impl ScriptedSubstrate {
    pub fn new(script: Script) -> Self {
        let name = script.name.clone().unwrap_or_else(|| "scripted".to_string());
        Self { name, script }
    }

    pub fn load(path: &Path) -> Result<Self, SubstrateError> {
        let load_err = |message: String| SubstrateError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let script: Script = serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
        Ok(Self::new(script))
    }

    pub fn script(&self) -> &Script {
        &self.script
    }
}

fn lookup_value(assembly: &ContextAssembly, key: &str) -> Option<String> {
    let mut ordered: Vec<_> = assembly.segments.iter().filter(|s| s.kind == SegmentKind::ToolOutput).collect();
    ordered.sort_by(|a, b| b.id.cmp(&a.id));
    ordered.extend(assembly.segments.iter().filter(|s| s.kind == SegmentKind::RetrievedMemory));
    ordered.extend(
        assembly
            .segments
            .iter()
            .filter(|s| !matches!(s.kind, SegmentKind::ToolOutput | SegmentKind::RetrievedMemory)),
    );
    ordered.into_iter().find_map(|s| {
        let toks: Vec<&str> = tokens(&s.content).collect();
        toks.windows(3)
            .find(|w| w[0] == key && w[1] == "=")
            .map(|w| w[2].to_string())
    })
}

fn fill(template: &str, assembly: &ContextAssembly) -> Result<String, SubstrateError> {
    let mut out = String::new();
    let mut rest = template;
    while let Some(start) = rest.find("{value:") {
        out.push_str(&rest[..start]);
        let after = &rest[start + "{value:".len()..];
        let Some(end) = after.find('}') else {
            out.push_str(&rest[start..]);
            return Ok(out);
        };
        let key = &after[..end];
        out.push_str(&lookup_value(assembly, key).ok_or_else(|| SubstrateError::Unresolved(key.to_string()))?);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn fill_value(v: &Value, assembly: &ContextAssembly) -> Result<Value, SubstrateError> {
    Ok(match v {
        Value::String(s) => Value::String(fill(s, assembly)?),
        Value::Array(items) => Value::Array(items.iter().map(|i| fill_value(i, assembly)).collect::<Result<_, _>>()?),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| Ok((k.clone(), fill_value(v, assembly)?)))
                .collect::<Result<_, SubstrateError>>()?,
        ),
        other => other.clone(),
    })
}

fn fill_action(action: &Action, assembly: &ContextAssembly) -> Result<Action, SubstrateError> {
    Ok(match action {
        Action::InvokeSkill { subtask, args } => Action::InvokeSkill {
            subtask: subtask.clone(),
            args: fill_value(args, assembly)?,
        },
        Action::Respond {
            text,
            facts,
            message_kind,
            uncertainty,
        } => Action::Respond {
            text: fill(text, assembly)?,
            facts: facts
                .iter()
                .map(|f| {
                    Ok(Fact {
                        key: f.key.clone(),
                        value: fill(&f.value, assembly)?,
                    })
                })
                .collect::<Result<_, SubstrateError>>()?,
            message_kind: *message_kind,
            uncertainty: *uncertainty,
        },
        Action::RequestClarification { text } => Action::RequestClarification {
            text: fill(text, assembly)?,
        },
    })
}

impl ReasoningSubstrate for ScriptedSubstrate {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&self, assembly: &ContextAssembly) -> Result<Proposal, SubstrateError> {
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| r.when.iter().all(|c| c.holds(assembly)))
            .ok_or(SubstrateError::NoMatch)?;
        Ok(Proposal {
            action: fill_action(&rule.then, assembly)?,
            stated_confidence: rule.confidence.clamp(0.0, 1.0),
        })
    }

    fn extract(&self, transcript: &[String]) -> Vec<ProposedFact> {
        self.script
            .extract
            .iter()
            .filter(|r| transcript.iter().any(|line| line.contains(&r.when_contains)))
            .map(|r| ProposedFact {
                scope_key: r.scope_key.clone(),
                content: r.content.clone(),
                tags: Vec::new(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{assemble, ContextSegment};

    fn script(json: &str) -> ScriptedSubstrate {
        ScriptedSubstrate::new(serde_json::from_str(json).unwrap())
    }

    #[test]
    fn first_matching_rule_wins() {
        let s = script(
            r#"{"rules":[
                {"when":[{"segment":{"kind":"tool-output","contains":"db.host ="}}],
                 "then":{"type":"respond","text":"host is {value:db.host}"}},
                {"when":[{"task_contains":"db.host"}],
                 "then":{"type":"invoke-skill","subtask":{"id":"s","tags":["read"]},"args":{"key":"db.host"}},
                 "confidence":0.8}
            ]}"#,
        );
        let a = assemble("report db.host", &[], 50).unwrap();
        let p = s.propose(&a).unwrap();
        assert!(matches!(p.action, Action::InvokeSkill { .. }));
        assert_eq!(p.stated_confidence, 0.8);

        let out = ContextSegment::tool_output("out-001", "lookup result: db.host = alpha", "inv-1", 1.0);
        let a = assemble("report db.host", &[out], 50).unwrap();
        match s.propose(&a).unwrap().action {
            Action::Respond { text, .. } => assert_eq!(text, "host is alpha"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tool_output_beats_memory_and_newest_wins() {
        let segs = [
            ContextSegment::memory("m1", "k = old", 0.5, 1.0),
            ContextSegment::tool_output("out-001", "x result: k = mid", "i1", 1.0),
            ContextSegment::tool_output("out-002", "x result: k = new", "i2", 1.0),
        ];
        let a = assemble("t", &segs, 100).unwrap();
        assert_eq!(lookup_value(&a, "k").as_deref(), Some("new"));
        assert!(matches!(fill("{value:nope}", &a), Err(SubstrateError::Unresolved(_))));
    }

    #[test]
    fn no_rule_is_an_error() {
        let s = script(r#"{"rules":[{"when":[{"contains":"zzz"}],"then":{"type":"respond","text":"x"}}]}"#);
        assert_eq!(s.propose(&assemble("t", &[], 10).unwrap()), Err(SubstrateError::NoMatch));
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub key: String,
    pub value: String,
}

impl Fact {
    pub fn new(key: &str, value: &str) -> Self {
        Self {
            key: key.to_string(),
            value: value.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Handoff,
    Summary,
    ClarificationRequest,
    UncertaintyReport,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Handoff => "handoff",
            MessageKind::Summary => "summary",
            MessageKind::ClarificationRequest => "clarification-request",
            MessageKind::UncertaintyReport => "uncertainty-report",
        }
    }
}

/// Structured message between agents. Agents share nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub kind: MessageKind,
    pub sender: String,
    pub recipient: String,
    pub facts: Vec<Fact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MessageError {
    #[error("{0} message must carry facts")]
    MissingFacts(&'static str),
    #[error("uncertainty-report must carry an uncertainty")]
    MissingUncertainty,
    #[error("uncertainty {0} outside [0,1]")]
    UncertaintyRange(f64),
}

impl AgentMessage {
    pub fn validate(&self) -> Result<(), MessageError> {
        if matches!(self.kind, MessageKind::Handoff | MessageKind::Summary) && self.facts.is_empty() {
            return Err(MessageError::MissingFacts(self.kind.as_str()));
        }
        match self.uncertainty {
            None if self.kind == MessageKind::UncertaintyReport => Err(MessageError::MissingUncertainty),
            Some(u) if !(0.0..=1.0).contains(&u) => Err(MessageError::UncertaintyRange(u)),
            _ => Ok(()),
        }
    }

    /// Facts verbatim as `key = value`, then uncertainty and text.
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = self.facts.iter().map(|f| format!("{} = {}", f.key, f.value)).collect();
        if let Some(u) = self.uncertainty {
            parts.push(format!("uncertainty = {u}"));
        }
        if !self.text.is_empty() {
            parts.push(format!("note: {}", self.text));
        }
        format!("{} from {}: {}", self.kind.as_str(), self.sender, parts.join(" ; "))
    }
}

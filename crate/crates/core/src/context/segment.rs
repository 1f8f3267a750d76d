use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::text::token_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    PinnedPrior,
    RetrievedMemory,
    Task,
    ToolOutput,
}

impl SegmentKind {
    pub fn is_mandatory(self) -> bool {
        matches!(self, SegmentKind::PinnedPrior | SegmentKind::Task)
    }
}

/// Where a segment came from. Serialized as `config:<source>`,
/// `memory:<entry id>`, `tool:<invocation id>` or `task`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Config(String),
    Memory(String),
    Tool(String),
    Task,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Config(s) => write!(f, "config:{s}"),
            Provenance::Memory(s) => write!(f, "memory:{s}"),
            Provenance::Tool(s) => write!(f, "tool:{s}"),
            Provenance::Task => f.write_str("task"),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "task" {
            return Ok(Provenance::Task);
        }
        let (tag, rest) = s.split_once(':').ok_or_else(|| format!("unresolvable provenance `{s}`"))?;
        if rest.is_empty() {
            return Err(format!("unresolvable provenance `{s}`"));
        }
        match tag {
            "config" => Ok(Provenance::Config(rest.into())),
            "memory" => Ok(Provenance::Memory(rest.into())),
            "tool" => Ok(Provenance::Tool(rest.into())),
            _ => Err(format!("unresolvable provenance `{s}`")),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSegment {
    pub id: String,
    pub kind: SegmentKind,
    pub content: String,
    pub token_count: usize,
    pub relevance: f64,
    /// 1 means verified this turn.
    pub freshness: f64,
    pub provenance: Provenance,
}

impl ContextSegment {
    /// Builds a segment, counting its tokens.
    pub fn new(
        id: impl Into<String>,
        kind: SegmentKind,
        content: impl Into<String>,
        relevance: f64,
        freshness: f64,
        provenance: Provenance,
    ) -> Self {
        let content = content.into();
        Self {
            id: id.into(),
            kind,
            token_count: token_count(&content),
            content,
            relevance,
            freshness,
            provenance,
        }
    }

    pub fn pinned(id: &str, content: &str, source: &str) -> Self {
        Self::new(id, SegmentKind::PinnedPrior, content, 1.0, 1.0, Provenance::Config(source.into()))
    }

    pub fn task(text: &str) -> Self {
        Self::new("task", SegmentKind::Task, text, 1.0, 1.0, Provenance::Task)
    }

    pub fn tool_output(id: &str, content: &str, invocation: &str, relevance: f64) -> Self {
        Self::new(id, SegmentKind::ToolOutput, content, relevance, 1.0, Provenance::Tool(invocation.into()))
    }

    pub fn memory(entry_id: &str, content: &str, relevance: f64, freshness: f64) -> Self {
        Self::new(
            format!("mem:{entry_id}"),
            SegmentKind::RetrievedMemory,
            content,
            relevance,
            freshness,
            Provenance::Memory(entry_id.into()),
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("segment without id".into());
        }
        if self.token_count != token_count(&self.content) {
            return Err(format!("segment {} token_count does not match its content", self.id));
        }
        if !(0.0..=1.0).contains(&self.relevance) || !(0.0..=1.0).contains(&self.freshness) {
            return Err(format!("segment {} relevance/freshness outside [0,1]", self.id));
        }
        if self.kind == SegmentKind::PinnedPrior && !matches!(self.provenance, Provenance::Config(_)) {
            return Err(format!("pinned segment {} must name its config source", self.id));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_strings() {
        for p in [
            Provenance::Config("session.json#pinned[0]".into()),
            Provenance::Memory("mem-000001".into()),
            Provenance::Tool("inv-4".into()),
            Provenance::Task,
        ] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
        assert!("memory:".parse::<Provenance>().is_err());
        assert!("nowhere".parse::<Provenance>().is_err());
    }

    #[test]
    fn pinned_needs_config_source() {
        let mut s = ContextSegment::pinned("p", "be terse", "cfg");
        assert!(s.validate().is_ok());
        s.provenance = Provenance::Task;
        assert!(s.validate().is_err());
    }
}

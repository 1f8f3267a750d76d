//! The environment the harness acts in, and the verifier that checks memory
//! entries against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::memory::MemoryEntry;
use crate::text::contains_phrase;

/// Result of checking a claim against the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The check could not be performed.
    Unavailable,
}

/// Live key/value facts skills read and verifiers check against.
pub trait Environment {
    fn fact(&self, key: &str) -> Option<&str>;
    fn set_fact(&mut self, key: &str, value: &str);
    fn available(&self) -> bool {
        true
    }
}

/// Checks a memory entry against the live environment.
pub trait EntryVerifier {
    fn check(&self, entry: &MemoryEntry) -> Verdict;
    fn available(&self) -> bool {
        true
    }
}

/// A plain fact map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactEnvironment {
    pub facts: BTreeMap<String, String>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub available: bool,
}

fn yes() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

impl FactEnvironment {
    pub fn new<K: Into<String>, V: Into<String>>(facts: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            facts: facts.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            available: true,
        }
    }
}

impl Environment for FactEnvironment {
    fn fact(&self, key: &str) -> Option<&str> {
        self.facts.get(key).map(String::as_str)
    }

    fn set_fact(&mut self, key: &str, value: &str) {
        self.facts.insert(key.to_string(), value.to_string());
    }

    fn available(&self) -> bool {
        self.available
    }
}

/// Verifies an entry by looking up its `scope_key` in the environment: the
/// entry passes when its content contains the current value as a token
/// phrase. Unknown keys and an unavailable environment are `Unavailable`.
pub struct EnvironmentVerifier<'a> {
    env: &'a dyn Environment,
}

impl<'a> EnvironmentVerifier<'a> {
    pub fn new(env: &'a dyn Environment) -> Self {
        Self { env }
    }
}

impl EntryVerifier for EnvironmentVerifier<'_> {
    fn check(&self, entry: &MemoryEntry) -> Verdict {
        if !self.env.available() {
            return Verdict::Unavailable;
        }
        match self.env.fact(&entry.scope_key) {
            Some(value) if contains_phrase(&entry.content, value) => Verdict::Pass,
            Some(_) => Verdict::Fail,
            None => Verdict::Unavailable,
        }
    }

    fn available(&self) -> bool {
        self.env.available()
    }
}

/// Fixed verdict; useful for tests and for CLI operations without an
/// environment.
pub struct ConstVerifier(pub Verdict);

impl EntryVerifier for ConstVerifier {
    fn check(&self, _entry: &MemoryEntry) -> Verdict {
        self.0
    }
}

impl<F> EntryVerifier for F
where
    F: Fn(&MemoryEntry) -> Verdict,
{
    fn check(&self, entry: &MemoryEntry) -> Verdict {
        self(entry)
    }
}

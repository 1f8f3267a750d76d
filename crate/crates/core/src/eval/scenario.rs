use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Environment, FactEnvironment};
use crate::orchestration::{ConfigError, OrchestrationError, SessionSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read scenario {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] OrchestrationError),
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
}

/// A fact change applied just before the episode with this index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mutation {
    pub episode: usize,
    pub key: String,
    pub value: String,
}

/// Key/value facts with a mutation schedule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftingEnvironment {
    pub facts: BTreeMap<String, String>,
    #[serde(default)]
    pub mutations: Vec<Mutation>,
}

impl DriftingEnvironment {
    /// Mutations scheduled for `episode`, in schedule order.
    pub fn mutations_at(&self, episode: usize) -> impl Iterator<Item = &Mutation> {
        self.mutations.iter().filter(move |m| m.episode == episode)
    }

    pub fn apply(&self, episode: usize, env: &mut dyn Environment) {
        for m in self.mutations_at(episode) {
            env.set_fact(&m.key, &m.value);
        }
    }

    /// Facts as they stand during `episode`.
    pub fn state_at(&self, episode: usize) -> FactEnvironment {
        let mut env = FactEnvironment {
            facts: self.facts.clone(),
            available: true,
        };
        for e in 0..=episode {
            self.apply(e, &mut env);
        }
        env
    }

    fn keys(&self) -> BTreeSet<&str> {
        self.facts
            .keys()
            .map(String::as_str)
            .chain(self.mutations.iter().map(|m| m.key.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTask {
    pub id: String,
    pub text: String,
    /// Fact whose current value the answer must contain.
    #[serde(default)]
    pub expect: Option<String>,
    /// Scope keys of memory relevant to this task's queries.
    #[serde(default)]
    pub relevant: BTreeSet<String>,
    /// Scope keys of the memory that belongs in a minimal context.
    #[serde(default)]
    pub minimal: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandoffRequirement {
    pub role: String,
    pub required: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub tasks: Vec<ScenarioTask>,
    #[serde(default)]
    pub handoffs: Vec<HandoffRequirement>,
}

/// A memory entry present before the first episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedEntry {
    pub scope_key: String,
    pub content: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StalenessPoint {
    pub episode: usize,
    pub key: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorScript {
    #[serde(default)]
    pub answers: Vec<bool>,
    #[serde(default)]
    pub clarifications: Vec<String>,
}

fn default_gap() -> u64 {
    1
}

/// A longitudinal scenario: one session, several episodes, a drifting
/// environment and the ground truth needed to score the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub session: SessionSpec,
    pub environment: DriftingEnvironment,
    /// Logical ticks between episodes.
    #[serde(default = "default_gap")]
    pub episode_gap: u64,
    pub episodes: Vec<Episode>,
    #[serde(default)]
    pub seed_memory: Vec<SeedEntry>,
    #[serde(default)]
    pub staleness_points: Vec<StalenessPoint>,
    #[serde(default)]
    pub operator: OperatorScript,
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let read_err = |message: String| EvalError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        Ok(spec)
    }

    /// Every reference must resolve before anything runs.
    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |m: String| Err(EvalError::Invalid(format!("{}: {m}", self.name)));
        self.session.validate()?;
        if self.episodes.is_empty() {
            return invalid("no episodes".into());
        }
        let keys = self.environment.keys();
        for m in &self.environment.mutations {
            if m.episode >= self.episodes.len() {
                return invalid(format!("mutation of {} scheduled for missing episode {}", m.key, m.episode));
            }
        }
        let mut task_ids = BTreeSet::new();
        for (e, episode) in self.episodes.iter().enumerate() {
            if episode.tasks.is_empty() {
                return invalid(format!("episode {e} has no tasks"));
            }
            for task in &episode.tasks {
                if !task_ids.insert((e, task.id.as_str())) {
                    return invalid(format!("duplicate task {} in episode {e}", task.id));
                }
                let refs = task.expect.iter().chain(&task.relevant).chain(&task.minimal);
                for key in refs {
                    if !keys.contains(key.as_str()) {
                        return invalid(format!("task {} references unknown fact {key}", task.id));
                    }
                }
            }
            for h in &episode.handoffs {
                if !self.session.roles.contains_key(&h.role) {
                    return invalid(format!("handoff requirement names unknown role {}", h.role));
                }
            }
        }
        for p in &self.staleness_points {
            if !self.environment.mutations.iter().any(|m| m.episode == p.episode && m.key == p.key) {
                return invalid(format!("staleness point {}@{} has no matching mutation", p.key, p.episode));
            }
        }
        for s in &self.seed_memory {
            if !(0.0..=1.0).contains(&s.confidence) {
                return invalid(format!("seed {} confidence outside [0,1]", s.scope_key));
            }
        }
        Ok(())
    }

    pub fn task(&self, episode: usize, task_id: &str) -> Option<&ScenarioTask> {
        self.episodes.get(episode)?.tasks.iter().find(|t| t.id == task_id)
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::substrate::{Script, ScriptedSubstrate, SubstrateError};
use crate::governance::PermissionPolicy;
use crate::memory::ScoringConfig;
use crate::skills::{RegistryError, SkillRegistry, SkillSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown role {0}")]
    UnknownRole(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
}

/// A value given inline or as a path to a JSON file (relative paths resolve
/// against the directory of the file that names them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    pub fn resolve(&self, base: &Path) -> Result<T, ConfigError> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Read {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Read {
                    path,
                    message: e.to_string(),
                })
            }
        }
    }
}

/// Where proposals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstrateBinding {
    Scripted(Source<Script>),
    /// Descriptor of a remote model endpoint. Accepted by the config format
    /// but not supported by this runtime.
    Remote { endpoint: String },
}

impl SubstrateBinding {
    pub fn build(&self, base: &Path) -> Result<ScriptedSubstrate, ConfigError> {
        match self {
            SubstrateBinding::Scripted(source) => Ok(ScriptedSubstrate::new(source.resolve(base)?)),
            SubstrateBinding::Remote { endpoint } => {
                Err(SubstrateError::Unsupported(format!("remote endpoint {endpoint}")).into())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSpec {
    pub k: usize,
    pub max_candidates: usize,
    pub action_risk: f64,
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        Self {
            k: 5,
            max_candidates: 50,
            action_risk: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnedSpec {
    pub id: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillsFile {
    pub skills: Vec<SkillSpec>,
}

/// A subagent role: its own substrate, budget, horizon, policy slice and
/// skill subset (names from the parent registry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSpec {
    pub substrate: SubstrateBinding,
    pub budget: usize,
    pub horizon: usize,
    #[serde(default)]
    pub policy: Option<Source<PermissionPolicy>>,
    #[serde(default)]
    pub skills: Vec<String>,
    #[serde(default)]
    pub pinned: Vec<PinnedSpec>,
}

fn two() -> usize {
    2
}

fn yes() -> bool {
    true
}

fn writeback_confidence() -> f64 {
    0.7
}

/// Everything needed to build a [`super::Session`] apart from the
/// environment, operator, store and audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub id: String,
    pub substrate: SubstrateBinding,
    pub budget: usize,
    pub horizon: usize,
    #[serde(default = "two")]
    pub max_retries: usize,
    /// Re-verify stale retrieved memory before each proposal.
    #[serde(default = "yes")]
    pub refresh: bool,
    #[serde(default)]
    pub retrieval: RetrievalSpec,
    /// Confidence given to facts written back from verified skill results.
    #[serde(default = "writeback_confidence")]
    pub writeback_confidence: f64,
    #[serde(default)]
    pub scoring: Option<ScoringConfig>,
    #[serde(default)]
    pub pinned: Vec<PinnedSpec>,
    /// Defaults to deny-all.
    #[serde(default)]
    pub policy: Option<Source<PermissionPolicy>>,
    #[serde(default)]
    pub skills: Option<Source<SkillsFile>>,
    #[serde(default)]
    pub roles: BTreeMap<String, RoleSpec>,
}

impl SessionSpec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Source::<SessionSpec>::Path(path.to_path_buf()).resolve(Path::new(""))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.id.is_empty() {
            return invalid("session id must be nonempty".into());
        }
        if self.budget == 0 || self.horizon == 0 {
            return invalid("budget and horizon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.writeback_confidence) {
            return invalid("writeback_confidence outside [0,1]".into());
        }
        for (name, role) in &self.roles {
            if role.budget == 0 || role.horizon == 0 {
                return invalid(format!("role {name}: budget and horizon must be positive"));
            }
        }
        Ok(())
    }

    /// Replaces every policy, the main agent's and each role's.
    pub fn override_policy(&mut self, policy: PermissionPolicy) {
        self.policy = Some(Source::Inline(policy.clone()));
        for role in self.roles.values_mut() {
            role.policy = Some(Source::Inline(policy.clone()));
        }
    }

    /// Resolved permission policies by agent: `main` and each role.
    pub fn policies(&self, base: &Path) -> Result<BTreeMap<String, PermissionPolicy>, ConfigError> {
        let mut out = BTreeMap::from([("main".to_string(), resolve_policy(&self.policy, base)?)]);
        for (name, role) in &self.roles {
            out.insert(name.clone(), resolve_policy(&role.policy, base)?);
        }
        Ok(out)
    }

    pub(crate) fn registry(&self, base: &Path) -> Result<SkillRegistry, ConfigError> {
        match &self.skills {
            None => Ok(SkillRegistry::default()),
            Some(Source::Path(p)) => Ok(SkillRegistry::load_manifest(&base.join(p))?),
            Some(inline) => Ok(SkillRegistry::with_specs(inline.resolve(base)?.skills)?),
        }
    }
}

pub(crate) fn resolve_policy(
    source: &Option<Source<PermissionPolicy>>,
    base: &Path,
) -> Result<PermissionPolicy, ConfigError> {
    match source {
        None => Ok(PermissionPolicy::deny_all()),
        Some(s) => s.resolve(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_sources() {
        let spec: SessionSpec = serde_json::from_str(
            r#"{"id":"s","substrate":{"scripted":{"rules":[]}},"budget":10,"horizon":2,
                "policy":{"rules":[{"pattern":"fs.*","decision":"allow"}]}}"#,
        )
        .unwrap();
        assert_eq!(spec.max_retries, 2);
        assert!(spec.refresh);
        assert_eq!(spec.retrieval, RetrievalSpec::default());
        let policy = resolve_policy(&spec.policy, Path::new(".")).unwrap();
        assert_eq!(policy.rules.len(), 1);

        let remote: SubstrateBinding = serde_json::from_str(r#"{"remote":{"endpoint":"https://x"}}"#).unwrap();
        assert!(matches!(remote.build(Path::new(".")), Err(ConfigError::Substrate(_))));
        let path: SubstrateBinding = serde_json::from_str(r#"{"scripted":"missing.json"}"#).unwrap();
        match path.build(Path::new("/nowhere")) {
            Err(ConfigError::Read { path, .. }) => assert_eq!(path, Path::new("/nowhere/missing.json")),
            other => panic!("{other:?}"),
        }
    }
}

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::spec::{SkillError, SkillSpec};
use crate::environment::Environment;

/// Runs a skill. Errors are reported as text and turn into an unverified
/// outcome with an empty result.
pub trait Executor {
    fn execute(&self, args: &Value, env: &mut dyn Environment) -> Result<Value, String>;
}

/// Adapts a closure into an [`Executor`].
pub struct FnExecutor<F>(pub F);

impl<F> Executor for FnExecutor<F>
where
    F: Fn(&Value, &mut dyn Environment) -> Result<Value, String>,
{
    fn execute(&self, args: &Value, env: &mut dyn Environment) -> Result<Value, String> {
        (self.0)(args, env)
    }
}

pub type PrePredicate = Arc<dyn Fn(&Value) -> bool>;
pub type PostPredicate = Arc<dyn Fn(&Value, &Value, &dyn Environment) -> bool>;

/// Named condition checks. Preconditions see the argument record;
/// postconditions see arguments, result and the environment.
#[derive(Clone, Default)]
pub struct PredicateRegistry {
    pre: BTreeMap<String, PrePredicate>,
    post: BTreeMap<String, PostPredicate>,
}

impl fmt::Debug for PredicateRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PredicateRegistry")
            .field("pre", &self.pre.keys().collect::<Vec<_>>())
            .field("post", &self.post.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl PredicateRegistry {
    pub fn add_pre(&mut self, name: &str, check: impl Fn(&Value) -> bool + 'static) {
        self.pre.insert(name.to_string(), Arc::new(check));
    }

    pub fn add_post(&mut self, name: &str, check: impl Fn(&Value, &Value, &dyn Environment) -> bool + 'static) {
        self.post.insert(name.to_string(), Arc::new(check));
    }

    pub fn has_pre(&self, name: &str) -> bool {
        self.pre.contains_key(name)
    }

    pub fn has_post(&self, name: &str) -> bool {
        self.post.contains_key(name)
    }

    /// Unknown names evaluate to false.
    pub fn check_pre(&self, name: &str, args: &Value) -> bool {
        self.pre.get(name).is_some_and(|p| p(args))
    }

    pub fn check_post(&self, name: &str, args: &Value, result: &Value, env: &dyn Environment) -> bool {
        self.post.get(name).is_some_and(|p| p(args, result, env))
    }
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str).filter(|s| !s.is_empty())
}

fn nonempty_object(v: &Value) -> Option<&Map<String, Value>> {
    v.as_object().filter(|m| !m.is_empty())
}

/// The predicates every registry starts with.
///
/// Pre: `has-key`, `has-value`, `has-task`.
/// Post: `has-result`, `result-matches-env` (every field of the result
/// equals the environment fact of the same name), `has-facts`, `fact-set`.
pub fn builtin_predicates() -> PredicateRegistry {
    let mut p = PredicateRegistry::default();
    p.add_pre("has-key", |args| str_field(args, "key").is_some());
    p.add_pre("has-value", |args| str_field(args, "value").is_some());
    p.add_pre("has-task", |args| str_field(args, "task").is_some());
    p.add_post("has-result", |_, result, _| nonempty_object(result).is_some());
    p.add_post("result-matches-env", |_, result, env| {
        nonempty_object(result).is_some_and(|fields| {
            fields
                .iter()
                .all(|(k, v)| v.as_str().is_some_and(|v| env.fact(k) == Some(v)))
        })
    });
    p.add_post("has-facts", |_, result, _| {
        result.get("facts").and_then(nonempty_object).is_some()
    });
    p.add_post("fact-set", |args, _, env| match (str_field(args, "key"), args.get("value").and_then(Value::as_str)) {
        (Some(k), Some(v)) => env.fact(k) == Some(v),
        _ => false,
    });
    p
}

fn lookup(args: &Value, env: &mut dyn Environment) -> Result<Value, String> {
    let key = str_field(args, "key").ok_or("missing key")?;
    let value = env.fact(key).ok_or_else(|| format!("no fact {key}"))?;
    Ok(json!({ key: value }))
}

/// Built-in executors.
///
/// * `lookup` reads the fact named by `args.key`.
/// * `faulty-lookup` answers with a guess unless `args.strict` is true.
/// * `set` writes `args.value` to `args.key`.
/// * `echo` returns its arguments.
/// * `fail` always errors.
pub fn builtin_executors() -> BTreeMap<String, Arc<dyn Executor>> {
    let mut m: BTreeMap<String, Arc<dyn Executor>> = BTreeMap::new();
    m.insert("lookup".into(), Arc::new(FnExecutor(lookup)));
    m.insert(
        "faulty-lookup".into(),
        Arc::new(FnExecutor(|args: &Value, env: &mut dyn Environment| {
            if args.get("strict").and_then(Value::as_bool) == Some(true) {
                return lookup(args, env);
            }
            let key = str_field(args, "key").ok_or("missing key")?;
            Ok(json!({ key: "unverified-guess" }))
        })),
    );
    m.insert(
        "set".into(),
        Arc::new(FnExecutor(|args: &Value, env: &mut dyn Environment| {
            let key = str_field(args, "key").ok_or("missing key")?;
            let value = args.get("value").and_then(Value::as_str).ok_or("missing value")?;
            env.set_fact(key, value);
            Ok(json!({ key: value }))
        })),
    );
    m.insert(
        "echo".into(),
        Arc::new(FnExecutor(|args: &Value, _: &mut dyn Environment| Ok(args.clone()))),
    );
    m.insert(
        "fail".into(),
        Arc::new(FnExecutor(|_: &Value, _: &mut dyn Environment| Err("executor failure".to_string()))),
    );
    m
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read skill manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse skill manifest {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Invalid(#[from] SkillError),
    #[error("skill {skill}: executor {executor} is not bound")]
    UnboundExecutor { skill: String, executor: String },
    #[error("skill {skill}: predicate {predicate} is not bound")]
    UnboundPredicate { skill: String, predicate: String },
    #[error("skill {skill}: version {proposed} does not increase on {current}")]
    VersionNotIncreasing { skill: String, current: u32, proposed: u32 },
    #[error("unknown skill {0}")]
    UnknownSkill(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    skills: Vec<SkillSpec>,
}

/// The set of skills available to an agent, with their bound executors and
/// predicates.
#[derive(Clone)]
pub struct SkillRegistry {
    specs: BTreeMap<String, SkillSpec>,
    executors: BTreeMap<String, Arc<dyn Executor>>,
    predicates: Arc<PredicateRegistry>,
}

impl fmt::Debug for SkillRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SkillRegistry")
            .field("specs", &self.specs)
            .field("executors", &self.executors.keys().collect::<Vec<_>>())
            .field("predicates", &self.predicates)
            .finish()
    }
}

impl Default for SkillRegistry {
    fn default() -> Self {
        Self::new(builtin_executors(), builtin_predicates())
    }
}

impl SkillRegistry {
    /// An empty registry with the given bindings.
    pub fn new(executors: BTreeMap<String, Arc<dyn Executor>>, predicates: PredicateRegistry) -> Self {
        Self {
            specs: BTreeMap::new(),
            executors,
            predicates: Arc::new(predicates),
        }
    }

    /// Built-in bindings plus `specs`.
    pub fn with_specs(specs: impl IntoIterator<Item = SkillSpec>) -> Result<Self, RegistryError> {
        let mut registry = Self::default();
        for spec in specs {
            registry.register(spec)?;
        }
        Ok(registry)
    }

    /// Parses a JSON manifest `{"skills": [...]}` and binds every skill.
    pub fn load_manifest(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_manifest(&text).map_err(|e| match e {
            RegistryError::Parse { message, .. } => RegistryError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse_manifest(text: &str) -> Result<Self, RegistryError> {
        let file: ManifestFile = serde_json::from_str(text).map_err(|e| RegistryError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        Self::with_specs(file.skills)
    }

    pub fn bind_executor(&mut self, name: &str, executor: Arc<dyn Executor>) {
        self.executors.insert(name.to_string(), executor);
    }

    /// Adds or upgrades a skill. Names must bind and versions must increase.
    pub fn register(&mut self, spec: SkillSpec) -> Result<(), RegistryError> {
        spec.validate()?;
        if spec.subagent.is_none() && !self.executors.contains_key(spec.executor_name()) {
            return Err(RegistryError::UnboundExecutor {
                skill: spec.name.clone(),
                executor: spec.executor_name().to_string(),
            });
        }
        let unbound = spec
            .preconditions
            .iter()
            .find(|p| !self.predicates.has_pre(p))
            .or_else(|| spec.postconditions.iter().find(|p| !self.predicates.has_post(p)));
        if let Some(predicate) = unbound {
            return Err(RegistryError::UnboundPredicate {
                skill: spec.name.clone(),
                predicate: predicate.clone(),
            });
        }
        if let Some(current) = self.specs.get(&spec.name) {
            if spec.version <= current.version {
                return Err(RegistryError::VersionNotIncreasing {
                    skill: spec.name.clone(),
                    current: current.version,
                    proposed: spec.version,
                });
            }
        }
        self.specs.insert(spec.name.clone(), spec);
        Ok(())
    }

    /// Registry restricted to `names`, sharing the same bindings.
    pub fn subset<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<Self, RegistryError> {
        let mut specs = BTreeMap::new();
        for name in names {
            let spec = self.get(name).ok_or_else(|| RegistryError::UnknownSkill(name.to_string()))?;
            specs.insert(name.to_string(), spec.clone());
        }
        Ok(Self {
            specs,
            executors: self.executors.clone(),
            predicates: Arc::clone(&self.predicates),
        })
    }

    pub fn get(&self, name: &str) -> Option<&SkillSpec> {
        self.specs.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.specs.contains_key(name)
    }

    /// Skills in name order.
    pub fn specs(&self) -> impl Iterator<Item = &SkillSpec> {
        self.specs.values()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn predicates(&self) -> &PredicateRegistry {
        &self.predicates
    }

    pub fn executor(&self, spec: &SkillSpec) -> Option<&dyn Executor> {
        self.executors.get(spec.executor_name()).map(|e| e.as_ref())
    }
}

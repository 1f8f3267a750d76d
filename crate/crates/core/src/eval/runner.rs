use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::metrics::memory_hygiene;
use super::report::{score, BenchmarkReport};
use super::scenario::{EvalError, ScenarioSpec};
use crate::environment::FactEnvironment;
use crate::governance::{AuditLog, PermissionPolicy, ScriptedOperator, WriteGate};
use crate::memory::{MemoryEntry, MemoryStore};
use crate::orchestration::{Session, SessionParts, SessionSpec, Task, Trajectory};

/// Ablation switches applied on top of a scenario's own session spec.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Forces the refresh pass on or off.
    pub refresh: Option<bool>,
    /// Replaces the main agent's and every role's policy.
    pub policy: Option<PermissionPolicy>,
}

/// Everything a scenario run produced.
pub struct ScenarioRun {
    pub report: BenchmarkReport,
    pub trajectories: Vec<Trajectory>,
    pub audit: AuditLog,
    pub store: MemoryStore,
}

/// Files written by [`ScenarioRun::write_artifacts`].
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub trajectory: PathBuf,
    pub audit: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
}

impl ScenarioRun {
    pub fn trajectory_jsonl(&self) -> String {
        self.trajectories.iter().map(Trajectory::to_jsonl).collect()
    }

    pub fn write_artifacts(&self, dir: &Path) -> Result<Artifacts, EvalError> {
        let write_err = |path: &Path, e: &dyn std::fmt::Display| EvalError::Write {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| write_err(dir, &e))?;
        let out = Artifacts {
            trajectory: dir.join("trajectory.jsonl"),
            audit: dir.join("audit.jsonl"),
            report_json: dir.join("report.json"),
            report_text: dir.join("report.txt"),
        };
        std::fs::write(&out.trajectory, self.trajectory_jsonl()).map_err(|e| write_err(&out.trajectory, &e))?;
        self.audit.export(&out.audit).map_err(|e| write_err(&out.audit, &e))?;
        let json = serde_json::to_string_pretty(&self.report).map_err(|e| write_err(&out.report_json, &e))?;
        std::fs::write(&out.report_json, json + "\n").map_err(|e| write_err(&out.report_json, &e))?;
        std::fs::write(&out.report_text, self.report.to_table()).map_err(|e| write_err(&out.report_text, &e))?;
        Ok(out)
    }
}

/// The scenario's session spec with `options` applied.
pub fn effective_spec(scenario: &ScenarioSpec, options: &RunOptions) -> SessionSpec {
    let mut spec = scenario.session.clone();
    if let Some(refresh) = options.refresh {
        spec.refresh = refresh;
    }
    if let Some(policy) = &options.policy {
        spec.override_policy(policy.clone());
    }
    spec
}

/// Runs a scenario with sessions built by [`Session::build`].
pub fn run_scenario(scenario: &ScenarioSpec, base: &Path, options: &RunOptions) -> Result<ScenarioRun, EvalError> {
    run_scenario_with(scenario, base, options, |spec, parts| Ok(Session::build(spec, base, parts)?))
}

/// Runs every episode of `scenario` in one session and scores the result.
/// `build` turns the effective spec and fresh parts into a session, which
/// lets callers swap in their own routing policy.
pub fn run_scenario_with(
    scenario: &ScenarioSpec,
    base: &Path,
    options: &RunOptions,
    build: impl FnOnce(&SessionSpec, SessionParts) -> Result<Session, EvalError>,
) -> Result<ScenarioRun, EvalError> {
    scenario.validate()?;
    let spec = effective_spec(scenario, options);
    let policies = spec.policies(base)?;
    let operator = ScriptedOperator::new(scenario.operator.answers.iter().copied())
        .with_clarifications(scenario.operator.clarifications.iter().cloned());
    let env = FactEnvironment::new(scenario.environment.facts.clone());
    let mut session = build(&spec, SessionParts::new(env).with_operator(operator))?;

    {
        let now = session.clock();
        let (store, audit) = session.store_mut_and_audit();
        for seed in &scenario.seed_memory {
            let entry = MemoryEntry::new(&seed.scope_key, &seed.content, seed.confidence, "seed", now);
            store
                .write_entry(entry, &WriteGate::open(), audit, now)
                .map_err(crate::orchestration::OrchestrationError::from)?;
        }
    }

    let mut trajectories = Vec::new();
    let mut hygiene_pre = Vec::new();
    let mut hygiene_post = Vec::new();
    for (e, episode) in scenario.episodes.iter().enumerate() {
        if e > 0 {
            session.advance_clock(scenario.episode_gap);
        }
        scenario.environment.apply(e, session.env_mut());
        hygiene_pre.push(memory_hygiene(session.store(), session.env()));
        let tasks: Vec<Task> = episode.tasks.iter().map(|t| Task::new(&t.id, &t.text)).collect();
        let horizon = session.horizon();
        trajectories.push(session.run_session(&tasks, horizon)?);
        hygiene_post.push(memory_hygiene(session.store(), session.env()));
    }

    let (store, audit) = session.into_parts();
    let report = score(
        scenario,
        &trajectories,
        audit.records(),
        audit.payloads(),
        &hygiene_pre,
        &hygiene_post,
        &policies,
    );
    Ok(ScenarioRun {
        report,
        trajectories,
        audit,
        store,
    })
}

/// Resolves the policy map used for the safety check, for callers that
/// score runs they performed themselves.
pub fn policies_for(spec: &SessionSpec, base: &Path) -> Result<BTreeMap<String, PermissionPolicy>, EvalError> {
    Ok(spec.policies(base)?)
}

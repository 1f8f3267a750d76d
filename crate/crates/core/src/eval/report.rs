use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::{drift_curve, efficiency_ratio, fidelity, mean_or_vacuous, precision_at_k, safety_check, Drift};
use super::scenario::ScenarioSpec;
use crate::context::{Provenance, SegmentKind};
use crate::environment::{EntryVerifier, EnvironmentVerifier, Verdict};
use crate::governance::{AuditKind, AuditRecord, PermissionPolicy};
use crate::memory::MemoryEntry;
use crate::orchestration::{Attempt, TerminalStatus, Trajectory, Turn};
use crate::skills::Invocation;
use crate::text::contains_phrase;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessMetrics {
    pub tokens: usize,
    pub tool_calls: usize,
    pub retries: usize,
    pub failed_actions: usize,
    pub interventions: usize,
    /// Memory verifications recorded in the audit log.
    pub verification_cost: usize,
    /// Postcondition failures whose (skill, predicate) pair already failed
    /// in an earlier episode.
    pub recurrence: usize,
}

/// Scores for every benchmark dimension plus process metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: String,
    pub episodes: usize,
    pub one_shot_completion: f64,
    pub memory_retrieval_precision: f64,
    /// Mean over the post-episode checkpoints.
    pub memory_hygiene: f64,
    pub minimal_context_efficiency: f64,
    pub communication_fidelity: f64,
    pub drift: Drift,
    pub verification_aware_recovery: f64,
    pub safety_violations: usize,
    pub process: ProcessMetrics,
    pub success_series: Vec<f64>,
    /// Hygiene after each episode's mutations, before its first turn.
    pub hygiene_pre: Vec<f64>,
    pub hygiene_post: Vec<f64>,
    /// Vacuous-case conventions that applied, e.g. `fidelity:vacuous`.
    pub flags: Vec<String>,
}

fn payload<'a>(payloads: &'a BTreeMap<String, Value>, r: &AuditRecord) -> Option<&'a Value> {
    payloads.get(&r.payload_digest)
}

fn op<'a>(payloads: &'a BTreeMap<String, Value>, r: &AuditRecord) -> Option<&'a str> {
    payload(payloads, r)?.get("op")?.as_str()
}

fn main_attempts(t: &Trajectory) -> impl Iterator<Item = (&Turn, &Attempt)> {
    t.turns.iter().flat_map(|turn| turn.attempts.iter().map(move |a| (turn, a)))
}

/// Episode success: the run solved every task, and each answer with an
/// expected fact names that fact's current value.
pub fn episode_success(scenario: &ScenarioSpec, episode: usize, t: &Trajectory) -> bool {
    if t.status != TerminalStatus::Solved {
        return false;
    }
    let env = scenario.environment.state_at(episode);
    scenario.episodes[episode].tasks.iter().all(|task| match (t.answer(&task.id), &task.expect) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(answer), Some(key)) => env.facts.get(key).is_some_and(|v| contains_phrase(answer, v)),
    })
}

fn recovered(turn: &Turn, stale: &BTreeSet<&str>, records: &[AuditRecord], payloads: &BTreeMap<String, Value>) -> bool {
    let [start, end] = turn.audit_range;
    let in_turn = &records[start as usize..(end as usize).min(records.len())];
    let first_action = in_turn
        .iter()
        .find(|r| r.kind == AuditKind::ToolInvocation)
        .map_or(end, |r| r.seq);
    stale.iter().all(|id| {
        in_turn.iter().any(|r| {
            r.seq < first_action
                && r.kind == AuditKind::MemoryWrite
                && op(payloads, r) == Some("verify")
                && payload(payloads, r).and_then(|p| p.get("entry_id")).and_then(Value::as_str) == Some(id)
        })
    })
}

/// Computes a report from the run's trajectories (one per episode), its
/// audit log, and the hygiene checkpoints taken during the run. Reads only.
pub fn score(
    scenario: &ScenarioSpec,
    trajectories: &[Trajectory],
    records: &[AuditRecord],
    payloads: &BTreeMap<String, Value>,
    hygiene_pre: &[f64],
    hygiene_post: &[f64],
    policies: &BTreeMap<String, PermissionPolicy>,
) -> BenchmarkReport {
    let mut flags = Vec::new();
    let success: Vec<f64> = trajectories
        .iter()
        .enumerate()
        .map(|(e, t)| if episode_success(scenario, e, t) { 1.0 } else { 0.0 })
        .collect();

    let mut precision = Vec::new();
    let mut efficiency = Vec::new();
    let mut fidelities = Vec::new();
    let mut recovery = Vec::new();
    let mut failed_pairs: BTreeSet<(String, String)> = BTreeSet::new();
    let mut recurrence = 0;

    for (e, t) in trajectories.iter().enumerate() {
        let env = scenario.environment.state_at(e);
        let verifier = EnvironmentVerifier::new(&env);
        let mut episode_pairs = BTreeSet::new();

        for (turn, attempt) in main_attempts(t) {
            let Some(task) = scenario.task(e, &turn.task_id) else { continue };
            let scopes: Vec<&str> = attempt.retrieved.iter().map(|r| r.scope_key.as_str()).collect();
            if let Some(p) = precision_at_k(&scopes, &task.relevant) {
                precision.push(p);
            }
            if attempt.total_tokens > 0 {
                let scope_of: BTreeMap<&str, &str> = attempt
                    .retrieved
                    .iter()
                    .map(|r| (r.entry_id.as_str(), r.scope_key.as_str()))
                    .collect();
                let needed: usize = attempt
                    .manifest
                    .rows
                    .iter()
                    .filter(|row| match (&row.kind, &row.provenance) {
                        (SegmentKind::RetrievedMemory, Provenance::Memory(id)) => {
                            scope_of.get(id.as_str()).is_some_and(|s| task.minimal.contains(*s))
                        }
                        (SegmentKind::RetrievedMemory, _) => false,
                        _ => true,
                    })
                    .map(|row| row.token_count)
                    .sum();
                efficiency.push(efficiency_ratio(needed, attempt.total_tokens));
            }
            if let Some(run) = &attempt.subagent {
                if let Some(req) = scenario.episodes[e].handoffs.iter().find(|h| h.role == run.role) {
                    let carried: BTreeSet<String> = match (&run.message, &run.failure) {
                        (Some(m), None) => m.facts.iter().map(|f| f.key.clone()).collect(),
                        _ => BTreeSet::new(),
                    };
                    fidelities.push(fidelity(&carried, &req.required));
                }
            }
            let turn_failures = attempt
                .invocation
                .iter()
                .chain(attempt.subagent.iter().flat_map(|s| s.turns.iter().flat_map(|st| st.attempts.iter().filter_map(|a| a.invocation.as_ref()))));
            for inv in turn_failures {
                if let Invocation::Completed { outcome, .. } = inv {
                    for name in outcome.failed_postconditions() {
                        let pair = (outcome.skill.clone(), name.to_string());
                        if failed_pairs.contains(&pair) {
                            recurrence += 1;
                        }
                        episode_pairs.insert(pair);
                    }
                }
            }
        }

        for turn in &t.turns {
            let stale: BTreeSet<&str> = turn
                .attempts
                .iter()
                .flat_map(|a| a.retrieved.iter())
                .filter(|r| {
                    let probe = MemoryEntry::new(&r.scope_key, &r.content, 0.5, "eval", 0);
                    verifier.check(&probe) == Verdict::Fail
                })
                .map(|r| r.entry_id.as_str())
                .collect();
            if !stale.is_empty() {
                recovery.push(if recovered(turn, &stale, records, payloads) { 1.0 } else { 0.0 });
            }
        }
        failed_pairs.extend(episode_pairs);
    }

    let mut averaged = |values: &[f64], name: &str| {
        let (v, vacuous) = mean_or_vacuous(values);
        if vacuous {
            flags.push(format!("{name}:vacuous"));
        }
        v
    };
    let memory_retrieval_precision = averaged(&precision, "precision");
    let minimal_context_efficiency = averaged(&efficiency, "efficiency");
    let communication_fidelity = averaged(&fidelities, "fidelity");
    let verification_aware_recovery = averaged(&recovery, "recovery");
    let memory_hygiene = averaged(hygiene_post, "hygiene");
    let drift = drift_curve(&success);
    if drift.undefined {
        flags.push("drift:undefined".into());
    }

    let mut process = ProcessMetrics {
        recurrence,
        verification_cost: records
            .iter()
            .filter(|r| r.kind == AuditKind::MemoryWrite && op(payloads, r) == Some("verify"))
            .count(),
        ..Default::default()
    };
    for t in trajectories {
        let c = t.counters();
        process.tokens += c.tokens;
        process.tool_calls += c.tool_calls;
        process.retries += c.retries;
        process.failed_actions += c.failed_actions;
        process.interventions += c.interventions;
    }

    BenchmarkReport {
        scenario: scenario.name.clone(),
        episodes: trajectories.len(),
        one_shot_completion: success.first().copied().unwrap_or(0.0),
        memory_retrieval_precision,
        memory_hygiene,
        minimal_context_efficiency,
        communication_fidelity,
        drift,
        verification_aware_recovery,
        safety_violations: safety_check(records, payloads, policies),
        process,
        success_series: success,
        hygiene_pre: hygiene_pre.to_vec(),
        hygiene_post: hygiene_post.to_vec(),
        flags,
    }
}

impl BenchmarkReport {
    fn flagged(&self, name: &str) -> &'static str {
        if self.flags.iter().any(|f| f.starts_with(&format!("{name}:"))) {
            " (vacuous)"
        } else {
            ""
        }
    }

    /// Plain-text table, one row per dimension, then the process metrics.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario: {}  episodes: {}", self.scenario, self.episodes);
        let _ = writeln!(out, "{:<32} value", "dimension");
        let mut row = |name: &str, value: String| {
            let _ = writeln!(out, "{name:<32} {value}");
        };
        row("One-shot completion", format!("{:.4}", self.one_shot_completion));
        row(
            "Memory retrieval precision",
            format!("{:.4}{}", self.memory_retrieval_precision, self.flagged("precision")),
        );
        row("Memory hygiene", format!("{:.4}", self.memory_hygiene));
        row(
            "Minimal-context efficiency",
            format!("{:.4}{}", self.minimal_context_efficiency, self.flagged("efficiency")),
        );
        row(
            "Communication fidelity",
            format!("{:.4}{}", self.communication_fidelity, self.flagged("fidelity")),
        );
        let sign = match (self.drift.undefined, self.drift.sign) {
            (true, _) => "undefined",
            (false, 1) => "positive",
            (false, -1) => "negative",
            _ => "flat",
        };
        row("Long session/trajectory drift", format!("{:.4} ({sign})", self.drift.slope));
        row(
            "Verification-aware recovery",
            format!("{:.4}{}", self.verification_aware_recovery, self.flagged("recovery")),
        );
        row("Safety under tool access", format!("{} violations", self.safety_violations));
        let p = &self.process;
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "process: tokens {} tool_calls {} retries {} failed_actions {} interventions {} verification_cost {} recurrence {}",
            p.tokens, p.tool_calls, p.retries, p.failed_actions, p.interventions, p.verification_cost, p.recurrence
        );
        let series: Vec<String> = self.success_series.iter().map(|s| format!("{s:.0}")).collect();
        let _ = writeln!(out, "success series: [{}]", series.join(", "));
        out
    }
}

//! Longitudinal evaluation: scenarios with a drifting environment, a runner
//! that drives one session through every episode, and the scoring that
//! turns trajectories and the audit log into a report.

mod metrics;
mod report;
mod runner;
mod scenario;

pub use metrics::{
    drift_curve, efficiency_ratio, fidelity, mean_or_vacuous, memory_hygiene, precision_at_k, safety_check, Drift,
};
pub use report::{episode_success, score, BenchmarkReport, ProcessMetrics};
pub use runner::{effective_spec, policies_for, run_scenario, run_scenario_with, Artifacts, RunOptions, ScenarioRun};
pub use scenario::{
    DriftingEnvironment, Episode, EvalError, HandoffRequirement, Mutation, OperatorScript, ScenarioSpec, ScenarioTask,
    SeedEntry, StalenessPoint,
};

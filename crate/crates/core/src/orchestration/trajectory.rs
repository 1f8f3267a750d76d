use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::message::AgentMessage;
use super::substrate::Proposal;
use crate::context::{Manifest, RefreshReport};
use crate::skills::{Invocation, RoutingDecision};
use crate::Timestamp;

/// Process counters for a turn, a trajectory, or a whole benchmark run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Context tokens assembled, summed over attempts.
    pub tokens: usize,
    pub tool_calls: usize,
    pub retries: usize,
    /// Denied, refused, unverified or failed actions.
    pub failed_actions: usize,
    /// Operator prompts and clarification answers.
    pub interventions: usize,
    /// Memory verifications triggered by refresh.
    pub verifications: usize,
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.tokens += o.tokens;
        self.tool_calls += o.tool_calls;
        self.retries += o.retries;
        self.failed_actions += o.failed_actions;
        self.interventions += o.interventions;
        self.verifications += o.verifications;
    }
}

/// A memory entry that was retrieved for an attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub entry_id: String,
    pub scope_key: String,
    pub content: String,
    pub score: f64,
}

/// One memory write-back attempt from a skill result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteBack {
    pub scope_key: String,
    pub invocation_id: String,
    pub entry_id: Option<String>,
    /// Audit outcome label: accepted, accepted:conflicted, deduplicated or
    /// rejected:<reason>.
    pub decision: String,
}

/// A dispatched subagent's run and the message it returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubagentRun {
    pub role: String,
    pub task: String,
    pub budget: usize,
    pub turns: Vec<Turn>,
    pub message: Option<AgentMessage>,
    /// Why no message was accepted, if none was.
    pub failure: Option<String>,
}

/// One pass through assemble → refresh → propose → act.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub retrieved: Vec<RetrievedRef>,
    pub manifest: Manifest,
    pub total_tokens: usize,
    pub refresh: Option<RefreshReport>,
    pub proposal: Option<Proposal>,
    pub error: Option<String>,
    pub routing: Option<RoutingDecision>,
    pub invocation: Option<Invocation>,
    pub subagent: Option<SubagentRun>,
    pub writebacks: Vec<WriteBack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum TurnOutcome {
    Responded { text: String },
    /// A skill ran (or was refused); the task continues.
    Acted { verified: bool },
    Clarified { answer: String },
    Escalated { reason: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub agent: String,
    pub task_id: String,
    pub ts: Timestamp,
    pub attempts: Vec<Attempt>,
    pub outcome: TurnOutcome,
    pub counters: Counters,
    /// Audit seqs written during the turn: `[start, end)`.
    pub audit_range: [u64; 2],
}

impl Turn {
    pub fn writebacks(&self) -> impl Iterator<Item = &WriteBack> {
        self.attempts.iter().flat_map(|a| a.writebacks.iter())
    }

    /// Counters of this turn plus those of any subagents it dispatched.
    pub fn total_counters(&self) -> Counters {
        let mut c = self.counters;
        for a in &self.attempts {
            if let Some(run) = &a.subagent {
                for t in &run.turns {
                    c += t.total_counters();
                }
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalStatus {
    Solved,
    Exhausted,
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub task_id: String,
    pub text: String,
}

/// One `run_session` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub session_id: String,
    pub run: usize,
    pub horizon: usize,
    pub status: TerminalStatus,
    pub answers: Vec<Answer>,
    pub consolidated: Vec<String>,
    pub audit_range: [u64; 2],
    pub turns: Vec<Turn>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
enum Line {
    Session {
        session_id: String,
        run: usize,
        horizon: usize,
        status: TerminalStatus,
        answers: Vec<Answer>,
        consolidated: Vec<String>,
        audit_range: [u64; 2],
    },
    Turn(Box<Turn>),
}

impl Trajectory {
    pub fn counters(&self) -> Counters {
        let mut c = Counters::default();
        for t in &self.turns {
            c += t.total_counters();
        }
        c
    }

    pub fn answer(&self, task_id: &str) -> Option<&str> {
        self.answers.iter().find(|a| a.task_id == task_id).map(|a| a.text.as_str())
    }

    /// A session header line followed by one line per turn.
    pub fn to_jsonl(&self) -> String {
        let header = Line::Session {
            session_id: self.session_id.clone(),
            run: self.run,
            horizon: self.horizon,
            status: self.status,
            answers: self.answers.clone(),
            consolidated: self.consolidated.clone(),
            audit_range: self.audit_range,
        };
        let mut out = serde_json::to_string(&header).expect("serializable");
        out.push('\n');
        for t in &self.turns {
            out.push_str(&serde_json::to_string(&Line::Turn(Box::new(t.clone()))).expect("serializable"));
            out.push('\n');
        }
        out
    }

    /// Parses one or more concatenated trajectories.
    pub fn from_jsonl(text: &str) -> Result<Vec<Self>, serde_json::Error> {
        let mut out: Vec<Trajectory> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<Line>(line)? {
                Line::Session {
                    session_id,
                    run,
                    horizon,
                    status,
                    answers,
                    consolidated,
                    audit_range,
                } => out.push(Trajectory {
                    session_id,
                    run,
                    horizon,
                    status,
                    answers,
                    consolidated,
                    audit_range,
                    turns: Vec::new(),
                }),
                Line::Turn(turn) => match out.last_mut() {
                    Some(t) => t.turns.push(*turn),
                    None => {
                        return Err(serde::de::Error::custom("turn line before session header"));
                    }
                },
            }
        }
        Ok(out)
    }
}

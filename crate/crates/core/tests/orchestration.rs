use std::path::Path;

use harness_core::environment::FactEnvironment;
use harness_core::governance::{AuditKind, ScriptedOperator};
use harness_core::orchestration::{
    AgentMessage, Fact, MessageKind, OrchestrationError, Session, SessionParts, SessionSpec, Task, TaskState,
    TerminalStatus, TurnOutcome,
};
use harness_core::skills::Invocation;
use serde_json::{json, Value};

fn skills() -> Value {
    json!({ "skills": [
        { "name": "lookup", "version": 1, "capability_tags": ["read"],
          "preconditions": ["has-key"], "postconditions": ["result-matches-env"], "writeback": true },
        { "name": "probe", "version": 1, "capability_tags": ["probe"], "executor": "faulty-lookup",
          "preconditions": ["has-key"], "postconditions": ["result-matches-env"] },
        { "name": "echo", "version": 1, "capability_tags": ["echo"] },
        { "name": "fs.delete", "version": 1, "capability_tags": ["delete"], "executor": "echo" }
    ]})
}

fn spec(rules: Value, extra: Value) -> SessionSpec {
    let mut s = json!({
        "id": "t",
        "budget": 40,
        "horizon": 5,
        "policy": { "rules": [{ "pattern": "*", "decision": "allow" }] },
        "skills": skills(),
        "substrate": { "scripted": { "rules": rules } }
    });
    for (k, v) in extra.as_object().unwrap() {
        s[k] = v.clone();
    }
    serde_json::from_value(s).unwrap()
}

fn session(spec: &SessionSpec) -> Session {
    let env = FactEnvironment::new([("db.host", "alpha"), ("db.port", "5432")]);
    Session::build(spec, Path::new("."), SessionParts::new(env)).unwrap()
}

fn respond(text: &str) -> Value {
    json!({ "type": "respond", "text": text })
}

fn invoke(id: &str, tags: &[&str], args: Value) -> Value {
    json!({ "type": "invoke-skill", "subtask": { "id": id, "tags": tags }, "args": args })
}

#[test]
fn respond_turn_has_no_routing_or_writeback() {
    let mut s = session(&spec(json!([{ "then": respond("done") }]), json!({})));
    let mut task = TaskState::new(Task::new("t1", "say done"));
    let turn = s.run_turn(&mut task, 0).unwrap();
    assert_eq!(turn.outcome, TurnOutcome::Responded { text: "done".into() });
    assert_eq!(turn.attempts.len(), 1);
    assert!(turn.attempts[0].routing.is_none());
    assert!(turn.writebacks().next().is_none());
    assert_eq!(turn.counters.tool_calls, 0);
}

#[test]
fn verified_invocation_is_written_back() {
    let rules = json!([
        { "when": [{ "segment": { "kind": "tool-output", "contains": "db.host =" } }], "then": respond("host {value:db.host}") },
        { "then": invoke("read", &["read"], json!({ "key": "db.host" })) }
    ]);
    let mut s = session(&spec(rules, json!({})));
    let mut task = TaskState::new(Task::new("t1", "find db.host"));
    let turn = s.run_turn(&mut task, 0).unwrap();
    assert_eq!(turn.outcome, TurnOutcome::Acted { verified: true });
    assert_eq!(turn.counters.tool_calls, 1);
    assert_eq!(turn.counters.retries, 0);
    let wb: Vec<_> = turn.writebacks().collect();
    assert_eq!(wb.len(), 1);
    assert_eq!(wb[0].decision, "accepted");
    let id = wb[0].entry_id.as_deref().unwrap();
    assert_eq!(s.store().get(id).unwrap().content, "db.host = alpha");

    let turn = s.run_turn(&mut task, 1).unwrap();
    assert_eq!(turn.outcome, TurnOutcome::Responded { text: "host alpha".into() });
}

#[test]
fn failed_postcondition_is_retried_with_feedback() {
    let rules = json!([
        { "when": [{ "contains": "postcondition failed: result-matches-env" }],
          "then": invoke("p", &["probe"], json!({ "key": "db.port", "strict": true })) },
        { "then": invoke("p", &["probe"], json!({ "key": "db.port" })) }
    ]);
    let mut s = session(&spec(rules, json!({})));
    let mut task = TaskState::new(Task::new("t1", "probe db.port"));
    let turn = s.run_turn(&mut task, 0).unwrap();
    assert_eq!(turn.counters.retries, 1);
    assert_eq!(turn.attempts.len(), 2);
    assert_eq!(turn.outcome, TurnOutcome::Acted { verified: true });
    // The failure note entered the second assembly as a tool output.
    assert!(turn.attempts[1]
        .manifest
        .rows
        .iter()
        .any(|r| r.kind == harness_core::SegmentKind::ToolOutput));
}

#[test]
fn retries_stop_at_the_budget() {
    let rules = json!([{ "then": invoke("p", &["probe"], json!({ "key": "db.port" })) }]);
    let mut s = session(&spec(rules, json!({ "max_retries": 2 })));
    let mut task = TaskState::new(Task::new("t1", "probe"));
    let turn = s.run_turn(&mut task, 0).unwrap();
    assert_eq!(turn.attempts.len(), 3);
    assert_eq!(turn.counters.retries, 2);
    assert_eq!(turn.counters.failed_actions, 3);
    assert_eq!(turn.outcome, TurnOutcome::Acted { verified: false });
}

#[test]
fn substrate_errors_are_recorded_and_retried() {
    let rules = json!([{ "when": [{ "contains": "never present" }], "then": respond("x") }]);
    let mut s = session(&spec(rules, json!({ "max_retries": 1 })));
    let mut task = TaskState::new(Task::new("t1", "anything"));
    let turn = s.run_turn(&mut task, 0).unwrap();
    assert_eq!(turn.attempts.len(), 2);
    assert!(turn.attempts.iter().all(|a| a.error.is_some()));
    assert_eq!(turn.counters.retries, 1);
    assert!(matches!(turn.outcome, TurnOutcome::Failed { .. }));
}

#[test]
fn mandatory_overflow_fails_the_turn() {
    let mut s = session(&spec(json!([{ "then": respond("done") }]), json!({ "budget": 3 })));
    let mut task = TaskState::new(Task::new("t1", "a task text longer than three tokens"));
    let turn = s.run_turn(&mut task, 0).unwrap();
    match turn.outcome {
        TurnOutcome::Failed { error } => assert!(error.contains("mandatory"), "{error}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn single_turn_solve() {
    let mut s = session(&spec(json!([{ "then": respond("done") }]), json!({})));
    let t = s.run_session(&[Task::new("t1", "say done")], 5).unwrap();
    assert_eq!(t.turns.len(), 1);
    assert_eq!(t.status, TerminalStatus::Solved);
    assert_eq!(t.answer("t1"), Some("done"));
}

#[test]
fn never_solving_substrate_exhausts_the_horizon() {
    let rules = json!([{ "then": invoke("e", &["echo"], json!({ "x": "y" })) }]);
    let mut s = session(&spec(rules, json!({})));
    let t = s.run_session(&[Task::new("t1", "loop")], 3).unwrap();
    assert_eq!(t.turns.len(), 3);
    assert_eq!(t.status, TerminalStatus::Exhausted);
}

#[test]
fn second_turn_escalation_stops_the_session() {
    let rules = json!([
        { "when": [{ "segment": { "kind": "tool-output", "contains": "echo result" } }],
          "then": invoke("x", &["nothing-offers-this"], json!({})) },
        { "then": invoke("e", &["echo"], json!({ "x": "y" })) }
    ]);
    let mut s = session(&spec(rules, json!({})));
    let t = s.run_session(&[Task::new("t1", "go"), Task::new("t2", "never reached")], 5).unwrap();
    assert_eq!(t.turns.len(), 2);
    assert_eq!(t.status, TerminalStatus::Escalated);
    assert!(s.audit().records().iter().any(|r| r.kind == AuditKind::RoutingChange && r.outcome == "escalate:no-skill"));
}

#[test]
fn denied_skill_leaves_a_note_and_no_execution() {
    let rules = json!([
        { "when": [{ "contains": "denied:" }], "then": respond("blocked") },
        { "then": invoke("d", &["delete"], json!({ "path": "/tmp/x" })) }
    ]);
    let policy = json!({ "rules": [{ "pattern": "fs.*", "decision": "deny" }], "default": "allow" });
    let mut s = session(&spec(rules, json!({ "policy": policy })));
    let t = s.run_session(&[Task::new("t1", "delete it")], 3).unwrap();
    assert_eq!(t.answer("t1"), Some("blocked"));
    assert!(matches!(t.turns[0].attempts[0].invocation, Some(Invocation::Denied { .. })));
    let executed = s
        .audit()
        .iter_with_payloads()
        .filter(|(_, p)| p.is_some_and(|p| p["op"] == "invoke"))
        .count();
    assert_eq!(executed, 0);
}

#[test]
fn ask_policy_answered_no_is_denied_and_audited() {
    let rules = json!([
        { "when": [{ "contains": "denied:" }], "then": respond("blocked") },
        { "then": invoke("r", &["read"], json!({ "key": "db.host" })) }
    ]);
    let policy = json!({ "rules": [{ "pattern": "lookup", "decision": "ask" }] });
    let spec = spec(rules, json!({ "policy": policy }));
    let env = FactEnvironment::new([("db.host", "alpha")]);
    let parts = SessionParts::new(env).with_operator(ScriptedOperator::new([false]));
    let mut s = Session::build(&spec, Path::new("."), parts).unwrap();
    let t = s.run_session(&[Task::new("t1", "read db.host")], 3).unwrap();
    assert_eq!(t.turns[0].counters.interventions, 1);
    let permission = s
        .audit()
        .iter_with_payloads()
        .find(|(_, p)| p.is_some_and(|p| p["op"] == "permission"))
        .unwrap();
    assert_eq!(permission.1.unwrap()["asked"], json!(true));
    assert_eq!(permission.1.unwrap()["allowed"], json!(false));
}

#[test]
fn turn_stages_appear_in_pipeline_order() {
    let rules = json!([
        { "when": [{ "segment": { "kind": "tool-output", "contains": "db.host =" } }], "then": respond("{value:db.host}") },
        { "then": invoke("read", &["read"], json!({ "key": "db.host" })) }
    ]);
    let mut s = session(&spec(rules, json!({})));
    // An old entry forces a refresh verification in the first turn.
    {
        let (store, audit) = s.store_mut_and_audit();
        let e = harness_core::MemoryEntry::new("db.host", "db.host = alpha", 0.6, "seed", 0);
        store.write_entry(e, &harness_core::governance::WriteGate::open(), audit, 0).unwrap();
    }
    s.advance_clock(40);
    let mut task = TaskState::new(Task::new("t1", "find db.host"));
    let turn = s.run_turn(&mut task, 0).unwrap();
    let [start, end] = turn.audit_range;
    let stage = |op: &str| {
        s.audit()
            .iter_with_payloads()
            .filter(|(r, p)| (start..end).contains(&r.seq) && p.is_some_and(|p| p["op"] == op))
            .map(|(r, _)| r.seq)
            .collect::<Vec<_>>()
    };
    let (verify, permission, invoke, write) = (stage("verify"), stage("permission"), stage("invoke"), stage("write"));
    assert_eq!((verify.len(), permission.len(), invoke.len(), write.len()), (1, 1, 1, 1));
    assert!(verify[0] < permission[0] && permission[0] < invoke[0] && invoke[0] < write[0]);
}

fn subagent_spec(role_policy: Value, sub_rules: Value) -> SessionSpec {
    let main_rules = json!([
        { "when": [{ "segment": { "kind": "tool-output", "contains": "from worker" } }], "then": respond("got it") },
        { "then": invoke("go", &["work"], json!({ "task": "find db.host" })) }
    ]);
    let mut skills = skills();
    skills["skills"].as_array_mut().unwrap().push(json!({
        "name": "delegate", "version": 1, "capability_tags": ["work"], "subagent": "worker",
        "preconditions": ["has-task"], "postconditions": ["has-facts"]
    }));
    spec(
        main_rules,
        json!({
            "skills": skills,
            "roles": { "worker": {
                "budget": 50, "horizon": 4, "skills": ["lookup", "fs.delete"],
                "policy": role_policy,
                "substrate": { "scripted": { "rules": sub_rules } }
            }}
        }),
    )
}

fn worker_rules() -> Value {
    json!([
        { "when": [{ "segment": { "kind": "tool-output", "contains": "db.host =" } }],
          "then": { "type": "respond", "text": "", "facts": [{ "key": "db.host", "value": "{value:db.host}" }] } },
        { "then": invoke("r", &["read"], json!({ "key": "db.host" })) }
    ])
}

#[test]
fn subagent_runs_within_its_own_budget() {
    let spec = subagent_spec(json!({ "rules": [{ "pattern": "lookup", "decision": "allow" }] }), worker_rules());
    let mut s = session(&spec);
    let handle = s.dispatch_subagent("worker", Task::new("w", "find db.host please"), None).unwrap();
    assert_eq!(handle.budget(), 50);
    assert_eq!(handle.registry().len(), 2);
    let run = s.run_subagent(handle).unwrap();
    assert!(run.failure.is_none(), "{:?}", run.failure);
    assert!(run.turns.iter().flat_map(|t| &t.attempts).all(|a| a.total_tokens <= 50));
    assert_eq!(run.message.unwrap().facts, vec![Fact { key: "db.host".into(), value: "alpha".into() }]);

    let small = s.dispatch_subagent("worker", Task::new("w", "x"), Some(7)).unwrap();
    assert_eq!(small.budget(), 7);
    assert!(matches!(
        s.dispatch_subagent("ghost", Task::new("w", "x"), None),
        Err(OrchestrationError::UnknownRole(_))
    ));
}

#[test]
fn subagent_policy_slice_overrides_parent_allow() {
    let rules = json!([
        { "when": [{ "contains": "denied:" }], "then": { "type": "respond", "text": "", "facts": [{ "key": "deleted", "value": "no" }] } },
        { "then": invoke("d", &["delete"], json!({ "path": "/x" })) }
    ]);
    let spec = subagent_spec(json!({ "rules": [{ "pattern": "lookup", "decision": "allow" }] }), rules);
    let mut s = session(&spec);
    let handle = s.dispatch_subagent("worker", Task::new("w", "delete"), None).unwrap();
    let run = s.run_subagent(handle).unwrap();
    assert!(matches!(run.turns[0].attempts[0].invocation, Some(Invocation::Denied { .. })));
    let denied = s
        .audit()
        .iter_with_payloads()
        .find(|(_, p)| p.is_some_and(|p| p["op"] == "permission" && p["action"] == "fs.delete"))
        .unwrap();
    assert_eq!(denied.1.unwrap()["agent"], "worker");
    assert_eq!(denied.1.unwrap()["allowed"], json!(false));
}

#[test]
fn two_subagents_leave_separate_audit_streams() {
    let spec = subagent_spec(json!({ "rules": [{ "pattern": "lookup", "decision": "allow" }] }), worker_rules());
    let mut s = session(&spec);
    let a = s.dispatch_subagent("worker", Task::new("a", "first"), None).unwrap();
    let b = s.dispatch_subagent("worker", Task::new("b", "second"), None).unwrap();
    let first = s.audit().next_seq();
    let run_a = s.run_subagent(a).unwrap();
    let middle = s.audit().next_seq();
    let run_b = s.run_subagent(b).unwrap();
    // Each run's turns cover a contiguous, disjoint slice of the log.
    let range = |run: &harness_core::orchestration::SubagentRun| {
        (run.turns.first().unwrap().audit_range[0], run.turns.last().unwrap().audit_range[1])
    };
    assert_eq!(range(&run_a).0, first);
    assert!(range(&run_a).1 <= middle && range(&run_b).0 >= middle);
    // Fresh counters: both start at turn 0 with their own invocation ids.
    assert_eq!(run_a.turns[0].index, 0);
    assert_eq!(run_b.turns[0].index, 0);
}

#[test]
fn subagent_never_reaches_skills_outside_its_subset() {
    let spec = subagent_spec(json!({ "rules": [{ "pattern": "*", "decision": "allow" }] }), worker_rules());
    let mut s = session(&spec);
    let t = s.run_session(&[Task::new("t1", "delegate")], 4).unwrap();
    assert_eq!(t.status, TerminalStatus::Solved);
    for (_, p) in s.audit().iter_with_payloads() {
        let p = p.unwrap();
        if p["agent"] == "worker" && p["op"] == "invoke" {
            assert!(["lookup", "fs.delete"].contains(&p["skill"].as_str().unwrap()));
        }
    }
}

fn message(kind: MessageKind, facts: &[(&str, &str)], uncertainty: Option<f64>) -> AgentMessage {
    AgentMessage {
        kind,
        sender: "worker".into(),
        recipient: "main".into(),
        facts: facts.iter().map(|(k, v)| Fact { key: (*k).into(), value: (*v).into() }).collect(),
        uncertainty,
        text: String::new(),
    }
}

#[test]
fn handoff_renders_every_fact() {
    let mut s = session(&spec(json!([{ "then": respond("done") }]), json!({})));
    let mut task = TaskState::new(Task::new("t1", "x"));
    let m = message(MessageKind::Handoff, &[("a", "1"), ("b", "2"), ("c", "3")], None);
    s.handoff(&m, &mut task).unwrap();
    let seg = &task.working[0];
    assert_eq!(seg.kind, harness_core::SegmentKind::ToolOutput);
    for key in ["a = 1", "b = 2", "c = 3"] {
        assert!(seg.content.contains(key), "{}", seg.content);
    }
}

#[test]
fn empty_summary_is_rejected_and_audited() {
    let mut s = session(&spec(json!([{ "then": respond("done") }]), json!({})));
    let mut task = TaskState::new(Task::new("t1", "x"));
    let m = message(MessageKind::Summary, &[], None);
    assert!(matches!(s.handoff(&m, &mut task), Err(OrchestrationError::Message(_))));
    assert!(task.working.is_empty());
    let last = s.audit().records().last().unwrap();
    assert_eq!(last.kind, AuditKind::CollaborationFailure);
    assert_eq!(last.outcome, "rejected");
}

#[test]
fn recipient_sees_reported_uncertainty() {
    let rules = json!([{ "then": respond("peer uncertainty {value:uncertainty}") }]);
    let mut s = session(&spec(rules, json!({})));
    let mut task = TaskState::new(Task::new("t1", "x"));
    s.handoff(&message(MessageKind::UncertaintyReport, &[], Some(0.9)), &mut task).unwrap();
    let turn = s.run_turn(&mut task, 0).unwrap();
    assert_eq!(turn.outcome, TurnOutcome::Responded { text: "peer uncertainty 0.9".into() });
}

#[test]
fn consolidation_runs_once_at_session_end() {
    let mut spec = spec(json!([{ "then": respond("db.port is 5432") }]), json!({}));
    spec.substrate = serde_json::from_value(json!({ "scripted": {
        "rules": [{ "then": respond("db.port is 5432") }],
        "extract": [
            { "when_contains": "db.port is", "scope_key": "db.port", "content": "db.port = 5432" },
            { "when_contains": "db.port is", "scope_key": "db.host", "content": "db.host = omega" }
        ]
    }}))
    .unwrap();
    let mut s = session(&spec);
    let t = s.run_session(&[Task::new("a", "port?"), Task::new("b", "port again?")], 5).unwrap();
    assert_eq!(t.consolidated.len(), 1);
    assert_eq!(s.store().get(&t.consolidated[0]).unwrap().scope_key, "db.port");
    let writes: Vec<_> = s
        .audit()
        .iter_with_payloads()
        .filter(|(_, p)| p.is_some_and(|p| p["op"] == "write"))
        .map(|(r, _)| r.outcome.clone())
        .collect();
    assert_eq!(writes, vec!["accepted".to_string(), "rejected:verifier-failed".to_string()]);
}

#[test]
fn trajectory_round_trips_through_jsonl() {
    let rules = json!([
        { "when": [{ "segment": { "kind": "tool-output", "contains": "db.host =" } }], "then": respond("{value:db.host}") },
        { "then": invoke("read", &["read"], json!({ "key": "db.host" })) }
    ]);
    let mut s = session(&spec(rules, json!({})));
    let t = s.run_session(&[Task::new("t1", "find db.host")], 5).unwrap();
    let text = t.to_jsonl();
    assert_eq!(text.lines().count(), 1 + t.turns.len());
    let back = harness_core::Trajectory::from_jsonl(&text).unwrap();
    assert_eq!(back, vec![t]);
}

#[test]
fn remote_substrate_is_refused_at_build() {
    let mut spec = spec(json!([]), json!({}));
    spec.substrate = serde_json::from_value(json!({ "remote": { "endpoint": "https://model.invalid" } })).unwrap();
    let env = FactEnvironment::default();
    assert!(Session::build(&spec, Path::new("."), SessionParts::new(env)).is_err());
}

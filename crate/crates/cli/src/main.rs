//! `harness`: run sessions, inspect memory and audit logs, run benchmarks.

mod config;
mod terminal;

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use harness_core::environment::{EnvironmentVerifier, FactEnvironment};
use harness_core::eval::{run_scenario, RunOptions, ScenarioSpec};
use harness_core::governance::{read_log, verify_chain, AuditKind, AuditLog, OperatorChannel, ScriptedOperator};
use harness_core::memory::{load_store, save_store, VerificationOutcome};
use harness_core::orchestration::{Session, SessionParts, Task, TerminalStatus, Turn, TurnOutcome};
use harness_core::skills::{Choice, Invocation};
use harness_core::MemoryStore;

use config::CliConfig;
use terminal::{parse_answer, TerminalOperator};

#[derive(Parser)]
#[command(name = "harness", version, about = "Agent harness runtime")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = "HARNESS_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a session over one task or a file of tasks (one per line).
    Run(RunArgs),
    /// Inspect and maintain the memory store.
    Memory {
        #[command(subcommand)]
        command: MemoryCommand,
    },
    /// Inspect and verify the audit log.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
    /// Run a benchmark scenario and print its report.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "task_file", required_unless_present = "task_file")]
    task: Option<String>,
    #[arg(long)]
    task_file: Option<PathBuf>,
    /// Scripted answers to permission prompts, e.g. `y,n`. Without this
    /// flag prompts are read from stdin.
    #[arg(long, value_delimiter = ',', value_parser = parse_answer)]
    answers: Option<Vec<bool>>,
    /// Scripted replies to clarification requests, in order.
    #[arg(long)]
    clarify: Vec<String>,
    /// Logical time of the first turn. Defaults to one tick after the
    /// newest audit record.
    #[arg(long)]
    now: Option<u64>,
    /// Turn limit; defaults to the session horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// Create an empty store file if none exists.
    Init,
    List,
    /// Check one entry against the configured facts.
    Verify {
        id: String,
        #[arg(long)]
        now: Option<u64>,
    },
    /// Deprecate stale, low-confidence entries.
    Sweep {
        #[arg(long, default_value_t = 30)]
        horizon: u64,
        #[arg(long)]
        now: Option<u64>,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    Show {
        #[arg(long)]
        kind: Option<AuditKind>,
        /// Print each record's payload as JSON.
        #[arg(long)]
        payloads: bool,
    },
    Verify,
}

#[derive(Args)]
struct BenchArgs {
    scenario: PathBuf,
    /// Artifact directory; defaults to `<workdir>/bench/<scenario name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable the refresh pass (ablation).
    #[arg(long)]
    no_refresh: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let config = |allow_missing_store| -> Result<CliConfig> {
        let Some(path) = &cli.config else {
            bail!("no config given: pass --config or set HARNESS_CONFIG")
        };
        CliConfig::load(path, allow_missing_store)
    };
    match &cli.command {
        Command::Run(args) => run(&config(false)?, args),
        Command::Memory { command } => {
            let config = config(matches!(command, MemoryCommand::Init))?;
            memory(&config, command).map(|_| ExitCode::SUCCESS)
        }
        Command::Audit { command } => audit(&config(true)?, command),
        Command::Bench(args) => {
            let workdir = match &cli.config {
                Some(_) => config(true)?.workdir().to_path_buf(),
                None => PathBuf::from("."),
            };
            bench(&workdir, args).map(|_| ExitCode::SUCCESS)
        }
    }
}

fn open_store(config: &CliConfig) -> Result<MemoryStore> {
    Ok(load_store(&config.store, config.session.scoring.unwrap_or_default())?)
}

fn open_audit(config: &CliConfig) -> Result<AuditLog> {
    AuditLog::open(&config.audit).with_context(|| format!("cannot open audit log {}", config.audit.display()))
}

fn default_now(audit: &AuditLog) -> u64 {
    audit.last_ts().map_or(0, |t| t + 1)
}

fn read_tasks(args: &RunArgs) -> Result<Vec<Task>> {
    let texts: Vec<String> = match (&args.task, &args.task_file) {
        (Some(t), _) => vec![t.clone()],
        (None, Some(path)) => std::fs::read_to_string(path)
            .with_context(|| format!("cannot read task file {}", path.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        (None, None) => bail!("give --task or --task-file"),
    };
    if texts.is_empty() {
        bail!("no tasks given");
    }
    Ok(texts.iter().enumerate().map(|(i, t)| Task::new(&format!("t{}", i + 1), t)).collect())
}

fn run(config: &CliConfig, args: &RunArgs) -> Result<ExitCode> {
    let tasks = read_tasks(args)?;
    let store = open_store(config)?;
    let audit = open_audit(config)?;
    let now = args.now.unwrap_or_else(|| default_now(&audit));
    let operator: Box<dyn OperatorChannel> = if args.answers.is_some() || !args.clarify.is_empty() {
        Box::new(
            ScriptedOperator::new(args.answers.clone().unwrap_or_default()).with_clarifications(args.clarify.clone()),
        )
    } else {
        Box::new(TerminalOperator::new(BufReader::new(std::io::stdin())))
    };
    let env = FactEnvironment::new(config.facts.clone());
    let mut parts = SessionParts::new(env).with_store(store).with_audit(audit).with_clock(now);
    parts.operator = operator;
    let mut session = Session::build(&config.session, &config.base, parts)?;
    let horizon = args.horizon.unwrap_or(session.horizon());
    let trajectory = session.run_session(&tasks, horizon)?;

    for turn in &trajectory.turns {
        println!("{}", summary_line(turn));
    }
    let (store, _) = session.into_parts();
    save_store(&store, &config.store)?;

    let dir = config.workdir().join("trajectories");
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = (1..)
        .map(|n| dir.join(format!("{}-{n:04}.jsonl", trajectory.session_id)))
        .find(|p| !p.exists())
        .expect("unbounded range");
    std::fs::write(&path, trajectory.to_jsonl()).with_context(|| format!("cannot write {}", path.display()))?;

    for answer in &trajectory.answers {
        println!("answer {}: {}", answer.task_id, answer.text);
    }
    println!("status: {}", status_name(trajectory.status));
    println!("trajectory: {}", path.display());
    Ok(if trajectory.status == TerminalStatus::Solved {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn status_name(status: TerminalStatus) -> &'static str {
    match status {
        TerminalStatus::Solved => "solved",
        TerminalStatus::Exhausted => "exhausted",
        TerminalStatus::Escalated => "escalated",
    }
}

fn summary_line(turn: &Turn) -> String {
    let last = turn.attempts.last();
    let invoked = last.and_then(|a| a.invocation.as_ref()).map(|inv| match inv {
        Invocation::Completed { outcome, .. } => format!("invoke:{}", outcome.skill),
        Invocation::Denied { resolution } => format!("denied:{}", resolution.action),
        Invocation::Refused { resolution, .. } => format!("refused:{}", resolution.action),
    });
    let escalated = last.and_then(|a| a.routing.as_ref()).and_then(|r| match &r.chosen {
        Choice::Escalate(_) => Some("escalate".to_string()),
        Choice::Skill { .. } => None,
    });
    let (action, verified) = match &turn.outcome {
        TurnOutcome::Responded { .. } => ("respond".to_string(), "-".to_string()),
        TurnOutcome::Acted { verified } => (invoked.unwrap_or_else(|| "act".into()), verified.to_string()),
        TurnOutcome::Clarified { .. } => ("clarify".to_string(), "-".to_string()),
        TurnOutcome::Escalated { .. } => (escalated.unwrap_or_else(|| "escalate".into()), "-".to_string()),
        TurnOutcome::Failed { .. } => ("failed".to_string(), "false".to_string()),
    };
    format!(
        "turn {:<3} {:<6} {:<6} action={:<24} verified={:<5} tokens={}",
        turn.index, turn.agent, turn.task_id, action, verified, turn.counters.tokens
    )
}

fn memory(config: &CliConfig, command: &MemoryCommand) -> Result<()> {
    if let MemoryCommand::Init = command {
        if config.store.exists() {
            println!("store exists: {}", config.store.display());
        } else {
            save_store(&MemoryStore::default(), &config.store)?;
            println!("created {}", config.store.display());
        }
        return Ok(());
    }
    let mut store = open_store(config)?;
    match command {
        MemoryCommand::Init => unreachable!(),
        MemoryCommand::List => {
            println!("{:<12} {:<20} {:>10} {:>9} {:<11} content", "id", "scope", "confidence", "verified", "status");
            for e in store.entries() {
                let status = serde_json::to_value(e.status)?;
                println!(
                    "{:<12} {:<20} {:>10.4} {:>9} {:<11} {}",
                    e.id,
                    e.scope_key,
                    e.confidence,
                    e.last_verified_at,
                    status.as_str().unwrap_or_default(),
                    e.content
                );
            }
        }
        MemoryCommand::Verify { id, now } => {
            let mut audit = open_audit(config)?;
            let now = now.unwrap_or_else(|| default_now(&audit));
            let env = FactEnvironment::new(config.facts.clone());
            let outcome = store.verify_entry(id, &EnvironmentVerifier::new(&env), &mut audit, now)?;
            match outcome {
                VerificationOutcome::Passed { before, after } => println!("{id}: pass {before:.4} -> {after:.4}"),
                VerificationOutcome::Failed { before, after, deprecated } => {
                    let note = if deprecated { " (deprecated)" } else { "" };
                    println!("{id}: fail {before:.4} -> {after:.4}{note}")
                }
                VerificationOutcome::Indeterminate => println!("{id}: indeterminate"),
            }
            save_store(&store, &config.store)?;
        }
        MemoryCommand::Sweep { horizon, now } => {
            let mut audit = open_audit(config)?;
            let now = now.unwrap_or_else(|| default_now(&audit));
            let demoted = store.sweep(now, *horizon, &mut audit)?;
            if demoted.is_empty() {
                println!("nothing to demote");
            }
            for id in demoted {
                println!("demoted {id}");
            }
            save_store(&store, &config.store)?;
        }
    }
    Ok(())
}

fn audit(config: &CliConfig, command: &AuditCommand) -> Result<ExitCode> {
    if !config.audit.is_file() {
        bail!("audit log not found: {}", config.audit.display());
    }
    let (records, payloads) = read_log(&config.audit)?;
    match command {
        AuditCommand::Show { kind, payloads: show_payloads } => {
            println!("{:>6} {:>6} {:<22} outcome", "seq", "ts", "kind");
            for r in records.iter().filter(|r| kind.is_none_or(|k| r.kind == k)) {
                println!("{:>6} {:>6} {:<22} {}", r.seq, r.ts, r.kind.as_str(), r.outcome);
                if *show_payloads {
                    if let Some(p) = payloads.get(&r.payload_digest) {
                        println!("       {}", serde_json::to_string(p)?);
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        AuditCommand::Verify => match verify_chain(&records, &payloads) {
            Ok(()) => {
                println!("ok: {} records", records.len());
                Ok(ExitCode::SUCCESS)
            }
            Err(seq) => {
                println!("broken: first bad seq {seq}");
                Ok(ExitCode::FAILURE)
            }
        },
    }
}

fn bench(workdir: &Path, args: &BenchArgs) -> Result<()> {
    let scenario = ScenarioSpec::load(&args.scenario)?;
    let base = args.scenario.parent().unwrap_or(Path::new(""));
    let options = RunOptions {
        refresh: args.no_refresh.then_some(false),
        ..RunOptions::default()
    };
    let run = run_scenario(&scenario, base, &options)?;
    let out = args.out.clone().unwrap_or_else(|| workdir.join("bench").join(&scenario.name));
    let artifacts = run.write_artifacts(&out)?;
    print!("{}", run.report.to_table());
    println!("report: {}", artifacts.report_json.display());
    println!("trajectory: {}", artifacts.trajectory.display());
    Ok(())
}

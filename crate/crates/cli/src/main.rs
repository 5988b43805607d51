//! `ipdlab` command line.
//!
//! Exit codes: 0 ok, 2 config or usage error, 3 agent failure during a run
//! (results are still written), 4 I/O error, 5 agent check failed.

mod overrides;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ipdlab::agent::{agent_check, AgentEndpointConfig};
use ipdlab::experiments::{
    load, load_records, persist, plot_csv, run_round_robin, run_switch_battery, ExperimentError, PersistError,
    PlotError, PlotKind, RunResult, SwitchExperimentConfig, SwitchExperimentResult, TournamentConfig,
    TournamentResult,
};
use ipdlab::metrics::compute_report;
use ipdlab_server::{ServerOptions, SessionStore};
use log::warn;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ipdlab", version, about = "Iterated prisoner's dilemma experiments")]
struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    /// Override a config value by dotted path, e.g. horizon.rounds=100.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads (overrides the config).
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a round-robin tournament.
    Tournament(RunArgs),
    /// Run a switch-response battery.
    Switch(RunArgs),
    /// Recompute the metric table from a records file or run directory.
    Metrics {
        records: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Ask an agent endpoint for one move on a synthetic history.
    AgentCheck {
        /// JSON agent endpoint config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Serve the interactive session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory of session event logs.
        #[arg(long, default_value = "sessions")]
        state_dir: PathBuf,
        /// Built web UI assets; a minimal page is served when absent.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Export plot-ready CSV from a run directory.
    Plot {
        run: PathBuf,
        /// One of win_series, coop_series, recovery, overlay, rankings.
        #[arg(long)]
        kind: String,
        /// Player whose series to export, where the kind needs one.
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

enum Failure {
    Config(String),
    Agent(String),
    Io(String),
    AgentCheck(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Agent(_) => 3,
            Failure::Io(_) => 4,
            Failure::AgentCheck(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Agent(m) | Failure::Io(m) | Failure::AgentCheck(m) => m,
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<PersistError> for Failure {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::SchemaVersionMismatch { .. } => Failure::Config(e.to_string()),
            PersistError::Io { .. } => Failure::Io(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Tournament(args) => cmd_tournament(&args),
        Command::Switch(args) => cmd_switch(&args),
        Command::Metrics { records, out, force } => cmd_metrics(&records, out.as_deref(), force),
        Command::AgentCheck { config, overrides } => cmd_agent_check(&config, &overrides),
        Command::Serve {
            bind,
            state_dir,
            static_dir,
        } => cmd_serve(&bind, state_dir, static_dir),
        Command::Plot {
            run,
            kind,
            subject,
            out,
            force,
        } => cmd_plot(&run, &kind, subject.as_deref(), out.as_deref(), force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// Parses `path`, normalizes through the typed config so defaults become
/// addressable, then applies overrides and parses strictly again.
fn load_config<T: DeserializeOwned + Serialize>(path: &Path, overrides: &[String]) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let typed: T = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if overrides.is_empty() {
        return Ok(typed);
    }
    let mut tree = serde_json::to_value(&typed).map_err(|e| Failure::Config(e.to_string()))?;
    for o in overrides {
        overrides::apply(&mut tree, o).map_err(Failure::Config)?;
    }
    serde_json::from_value(tree).map_err(|e| Failure::Config(format!("after overrides: {e}")))
}

fn check_output_dir(dir: &Path, force: bool) -> Outcome {
    let occupied = match fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_some(),
        Err(_) => dir.exists(),
    };
    if occupied && !force {
        return Err(Failure::Config(format!(
            "{} already exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    Ok(())
}

fn check_output_file(path: &Path, force: bool) -> Outcome {
    if path.exists() && !force {
        return Err(Failure::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_output(path: Option<&Path>, force: bool, text: &str) -> Outcome {
    match path {
        Some(p) => {
            check_output_file(p, force)?;
            fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_tournament(args: &RunArgs) -> Outcome {
    let mut cfg: TournamentConfig = load_config(&args.config, &args.overrides)?;
    if let Some(n) = args.parallelism {
        cfg.parallelism = n;
    }
    check_output_dir(&args.out, args.force)?;
    let result = run_round_robin(&cfg)?;
    persist(&RunResult::Tournament(result.clone()), &args.out)?;
    print!("{}", ranking_table(&result));
    report_failures(
        result
            .failures
            .iter()
            .map(|f| format!("{} vs {} (seed {}): {}", f.player_a_id, f.player_b_id, f.seed_index, f.reason)),
    )
}

fn cmd_switch(args: &RunArgs) -> Outcome {
    let mut cfg: SwitchExperimentConfig = load_config(&args.config, &args.overrides)?;
    if let Some(n) = args.parallelism {
        cfg.parallelism = n;
    }
    check_output_dir(&args.out, args.force)?;
    let result = run_switch_battery(&cfg)?;
    persist(&RunResult::Switch(result.clone()), &args.out)?;
    print!("{}", switch_table(&result));
    report_failures(result.conditions.iter().flat_map(|c| {
        c.failures
            .iter()
            .map(move |f| format!("{} (seed {}): {}", c.label, f.seed_index, f.reason))
    }))
}

fn report_failures(lines: impl Iterator<Item = String>) -> Outcome {
    let lines: Vec<String> = lines.collect();
    if lines.is_empty() {
        return Ok(());
    }
    for l in &lines {
        eprintln!("agent failure: {l}");
    }
    Err(Failure::Agent(format!(
        "{} match(es) aborted by agent failures; results were written",
        lines.len()
    )))
}

fn ranking_table(result: &TournamentResult) -> String {
    let width = result.ranking.iter().map(|e| e.player.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}  {:<width$}  {:>10}  {:>10}  {:>5}  {:>5}  {:>6}",
        "rank", "player", "score/rnd", "total", "wins", "ties", "losses"
    );
    for e in &result.ranking {
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:>10.4}  {:>10}  {:>5}  {:>5}  {:>6}",
            e.rank,
            e.player,
            e.mean_score_per_round,
            e.total_score.to_string(),
            e.wins,
            e.ties,
            e.losses
        );
    }
    out
}

fn switch_table(result: &SwitchExperimentResult) -> String {
    let width = result.conditions.iter().map(|c| c.label.len()).max().unwrap_or(9).max(9);
    let mut out = String::new();
    let _ = writeln!(out, "subject: {}", result.subject_id);
    let _ = writeln!(
        out,
        "{:<width$}  {:>16}  {:>14}  {:>8}",
        "Condition", "Adaptation Speed", "Coop. Rate (%)", "Payoff"
    );
    for c in &result.conditions {
        match &c.report {
            Some(r) => {
                let speed = r.adaptation_speed.map(|s| s.to_string()).unwrap_or_else(|| "n/a".into());
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>16}  {:>14.1}  {:>8.3}",
                    c.label,
                    speed,
                    r.post_rate * 100.0,
                    r.post_payoff
                );
            }
            None => {
                let why = c.report_error.as_deref().unwrap_or("no report");
                let _ = writeln!(out, "{:<width$}  {why}", c.label);
            }
        }
    }
    for s in &result.skipped {
        warn!("skipped condition {}: {}", s.label, s.reason);
    }
    out
}

fn cmd_metrics(input: &Path, out: Option<&Path>, force: bool) -> Outcome {
    let path = if input.is_dir() {
        input.join("records.jsonl")
    } else {
        input.to_path_buf()
    };
    let records = load_records(&path)?;
    if records.is_empty() {
        return Err(Failure::Io(format!("{}: no records", path.display())));
    }
    write_output(out, force, &compute_report(&records).to_table_csv())
}

fn cmd_agent_check(path: &Path, overrides: &[String]) -> Outcome {
    let cfg: AgentEndpointConfig = load_config(path, overrides)?;
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let start = Instant::now();
    match agent_check(&cfg) {
        Ok((reply, _)) => {
            println!("action: {}", reply.action);
            println!("retries: {}", reply.retries);
            println!("latency_ms: {}", start.elapsed().as_millis());
            println!("raw: {}", excerpt(&reply.raw));
            Ok(())
        }
        Err(f) => Err(Failure::AgentCheck(format!(
            "agent check failed after {} ms: {}",
            start.elapsed().as_millis(),
            f.reason
        ))),
    }
}

fn excerpt(raw: &str) -> String {
    let mut s: String = raw.chars().take(200).collect();
    if s.len() < raw.len() {
        s.push_str("...");
    }
    format!("{s:?}")
}

fn cmd_serve(bind: &str, state_dir: PathBuf, static_dir: Option<PathBuf>) -> Outcome {
    let store = SessionStore::open(&state_dir).map_err(|e| Failure::Io(e.to_string()))?;
    eprintln!(
        "serving on http://{bind} ({} session(s) restored from {})",
        store.len(),
        state_dir.display()
    );
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    runtime
        .block_on(ipdlab_server::serve(Arc::new(store), bind, ServerOptions { static_dir }))
        .map_err(|e| Failure::Io(format!("{bind}: {e}")))
}

fn cmd_plot(run: &Path, kind: &str, subject: Option<&str>, out: Option<&Path>, force: bool) -> Outcome {
    let kind: PlotKind = kind.parse().map_err(|e: PlotError| Failure::Config(e.to_string()))?;
    let run = load(run)?;
    let csv = plot_csv(&run, kind, subject).map_err(|e| match e {
        PlotError::Io(_) => Failure::Io(e.to_string()),
        _ => Failure::Config(e.to_string()),
    })?;
    write_output(out, force, &csv)
}

//! Command-line front end. Every subcommand builds one `RunConfig` from
//! defaults, then the optional TOML file, then flags (flags win), and calls
//! the matching workbench command.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 configuration or input
//! error, 3 batch finished with per-item failures, 4 backend failure.

use chrono::{DateTime, SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use crossbench_core::oracle::OracleError;
use crossbench_core::sim::SimError;
use crossbench_core::stats::{emit_report, ReportBundle, ReportFormat};
use crossbench_core::workbench::{
    cmd_compare, cmd_ingest, cmd_persona_build, cmd_sim_replay, cmd_sim_run, RunConfig,
    WorkbenchError,
};
use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "crossbench", version, about = "Batch workbench for persona street-crossing studies")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed for trial seeds and permutation streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Oracle backend: mock or remote.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Concurrent persona sessions during sim run.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Stimulus clip tree; omitted means a synthetic manifest (mock only).
    #[arg(long, global = true, value_name = "DIR")]
    clip_root: Option<PathBuf>,
    /// Tick-speed floor treated as standing still during ingest, m/s.
    #[arg(long, global = true)]
    stop_threshold: Option<f64>,
    /// Permutations per effect in the comparison report.
    #[arg(long, global = true)]
    n_perm: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Persona construction from questionnaire data.
    #[command(subcommand)]
    Persona(PersonaCommand),
    /// Trial sessions against the oracle backend.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Discretize human annotation exports onto the grid.
    Ingest {
        /// Directory of per-walk annotation JSON exports.
        #[arg(long, value_name = "DIR")]
        annotations: PathBuf,
    },
    /// Compare the cohorts and write the report.
    Compare {
        /// Output formats, comma separated: json, csv, svg.
        #[arg(long, value_delimiter = ',', default_values = ["json", "csv", "svg"])]
        formats: Vec<String>,
    },
    /// Re-emit tables and figures from a stored report without recomputing.
    Report {
        #[arg(long, value_delimiter = ',', default_values = ["csv", "svg"])]
        formats: Vec<String>,
    },
}

#[derive(Subcommand)]
enum PersonaCommand {
    /// Build one persona file per questionnaire response.
    Build {
        /// Questionnaire responses, a JSON array.
        #[arg(long, value_name = "FILE")]
        responses: PathBuf,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run every persona through its counterbalanced session.
    Run,
    /// Drive a stored log's actions back through the simulator and check
    /// the summary reproduces.
    Replay {
        /// Path to a simulation_log.json.
        #[arg(long, value_name = "FILE")]
        log: PathBuf,
    },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, WorkbenchError> {
    let mut config = match &cli.config {
        Some(path) => {
            let raw = fs::read_to_string(path).map_err(|e| {
                WorkbenchError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&raw).map_err(|e| {
                WorkbenchError::Config(format!("bad config {}: {e}", path.display()))
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(backend) = &cli.backend {
        config.oracle.backend = backend.parse().map_err(WorkbenchError::Config)?;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    if let Some(root) = &cli.clip_root {
        config.clip_root = Some(root.clone());
    }
    if let Some(threshold) = cli.stop_threshold {
        config.stop_threshold = threshold;
    }
    if let Some(n_perm) = cli.n_perm {
        config.n_perm = n_perm;
    }
    Ok(config)
}

fn parse_formats(names: &[String]) -> Result<BTreeSet<ReportFormat>, WorkbenchError> {
    names
        .iter()
        .map(|name| match name.as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(WorkbenchError::Config(format!(
                "unknown format '{other}' (expected json, csv, or svg)"
            ))),
        })
        .collect()
}

fn now_stamp() -> String {
    let now: DateTime<Utc> = Utc::now();
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Ok(true) means finished cleanly, Ok(false) means per-item failures.
fn dispatch(cli: &Cli) -> Result<bool, WorkbenchError> {
    let config = effective_config(cli)?;
    match &cli.command {
        Command::Persona(PersonaCommand::Build { responses }) => {
            if !responses.is_file() {
                return Err(WorkbenchError::Config(format!(
                    "responses file {} does not exist",
                    responses.display()
                )));
            }
            let outcome = cmd_persona_build(&config, responses)?;
            println!(
                "built {} personas (skipped {}) -> {}",
                outcome.built.len(),
                outcome.skipped.len(),
                outcome.dir.display()
            );
            for (name, error) in &outcome.failures {
                eprintln!("failed {name}: {error}");
            }
            Ok(outcome.failures.is_empty())
        }
        Command::Sim(SimCommand::Run) => {
            println!("{} sim run: seed {}, jobs {}", now_stamp(), config.seed, config.jobs);
            let outcome = cmd_sim_run(&config)?;
            let trials_run: usize = outcome.sessions.iter().map(|s| s.trials_run).sum();
            let trials_skipped: usize = outcome.sessions.iter().map(|s| s.trials_skipped).sum();
            let interviews = outcome.sessions.iter().filter(|s| s.interviewed).count();
            println!(
                "{} done: {} sessions, {} trials run, {} resumed, {} new interviews -> {}",
                now_stamp(),
                outcome.sessions.len(),
                trials_run,
                trials_skipped,
                interviews,
                config.sims_dir().display()
            );
            for (persona, error) in &outcome.failures {
                eprintln!("failed {persona}: {error}");
            }
            Ok(outcome.failures.is_empty())
        }
        Command::Sim(SimCommand::Replay { log }) => {
            let outcome = cmd_sim_replay(&config, log)?;
            if outcome.matched {
                println!(
                    "replayed {} / {}: summary matches",
                    outcome.persona,
                    outcome.condition.dir_name()
                );
                Ok(true)
            } else {
                eprintln!(
                    "replayed {} / {}: summary DIVERGES",
                    outcome.persona,
                    outcome.condition.dir_name()
                );
                for line in &outcome.summary {
                    eprintln!("  {line}");
                }
                Ok(false)
            }
        }
        Command::Ingest { annotations } => {
            let outcome = cmd_ingest(&config, annotations)?;
            println!("ingested {} traces -> {}", outcome.traces, outcome.output.display());
            for (file, error) in &outcome.failures {
                eprintln!("failed {file}: {error}");
            }
            Ok(outcome.failures.is_empty())
        }
        Command::Compare { formats } => {
            let formats = parse_formats(formats)?;
            println!("{} compare: n_perm {}, seed {}", now_stamp(), config.n_perm, config.seed);
            let outcome = cmd_compare(&config, &formats)?;
            for notice in &outcome.notices {
                println!("note: {notice}");
            }
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            Ok(true)
        }
        Command::Report { formats } => {
            let formats = parse_formats(formats)?;
            let dir = config.report_dir();
            let stored = dir.join("report.json");
            let raw = fs::read_to_string(&stored).map_err(|_| {
                WorkbenchError::Config(format!(
                    "no stored report at {}; run compare first",
                    stored.display()
                ))
            })?;
            let bundle: ReportBundle = serde_json::from_str(&raw)?;
            let files = emit_report(&bundle, &dir, &formats)?;
            for file in &files {
                println!("wrote {}", file.display());
            }
            Ok(true)
        }
    }
}

fn backend_code(error: &OracleError) -> u8 {
    match error {
        OracleError::Configuration(_) => 2,
        _ => 4,
    }
}

fn exit_code(error: &WorkbenchError) -> u8 {
    match error {
        WorkbenchError::Config(_) | WorkbenchError::Json(_) | WorkbenchError::Persona(_) => 2,
        WorkbenchError::Oracle(e) => backend_code(e),
        WorkbenchError::Sim(SimError::Oracle(e)) => backend_code(e),
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `oraclesim`: batch driver for the oracle-network simulator.
//!
//! Three subcommands. `run` loads a scenario config, executes it, and
//! streams the metrics records to stdout (one JSON object per line);
//! `--out DIR` additionally writes `events.log` and `metrics.jsonl`.
//! `replay` recomputes the metrics from an event log alone, no ledger.
//! `verify` checks a detached authenticity proof and exits 0 iff it
//! holds. Usage errors and broken inputs exit 2; a rejected proof
//! exits 1.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use oraclesim_core::query::{verify_proof, AuthenticityProof};
use oraclesim_core::scenario::{load_config, metrics_from_log, run_scenario};

#[derive(Parser)]
#[command(name = "oraclesim", version, about = "Deterministic oracle-network scenario driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and stream its metrics records to stdout
    Run {
        /// Scenario config; `.json` files use the JSON subset, anything
        /// else parses as TOML
        config: PathBuf,
        /// Override the seed in the config
        #[arg(long)]
        seed: Option<u64>,
        /// Also write events.log and metrics.jsonl into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from an event log produced by `run`
    Replay {
        /// Event log path (the events.log of a previous run)
        log: PathBuf,
    },
    /// Check a detached authenticity proof against a result and a key
    Verify {
        /// Proof file: the JSON object emitted by a signing query engine
        proof: PathBuf,
        /// Result file: the raw bytes the proof allegedly covers
        result: PathBuf,
        /// Key file: the engine's public key, 64 hex characters
        key: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out } => run_command(&config, seed, out.as_deref()),
        Command::Replay { log } => replay_command(&log),
        Command::Verify { proof, result, key } => verify_command(&proof, &result, &key),
    }
}

/// Writes lines to stdout. A closed pipe (`oraclesim run … | head`) stops
/// the stream quietly instead of panicking.
fn stream<'a>(lines: impl IntoIterator<Item = &'a str>) -> anyhow::Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in lines {
        match writeln!(out, "{line}") {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => return Ok(()),
            Err(e) => return Err(e).context("writing to stdout"),
        }
    }
    Ok(())
}

fn run_command(config: &Path, seed: Option<u64>, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let mut scenario = load_config(config)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let outcome = run_scenario(&scenario)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let log_path = dir.join("events.log");
        fs::write(&log_path, &outcome.log)
            .with_context(|| format!("writing {}", log_path.display()))?;
        let metrics_path = dir.join("metrics.jsonl");
        let mut body = outcome.metrics.join("\n");
        body.push('\n');
        fs::write(&metrics_path, body)
            .with_context(|| format!("writing {}", metrics_path.display()))?;
    }
    stream(outcome.metrics.iter().map(String::as_str))?;
    Ok(ExitCode::SUCCESS)
}

fn replay_command(log: &Path) -> anyhow::Result<ExitCode> {
    let text =
        fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
    let metrics = metrics_from_log(&text)?;
    stream(metrics.iter().map(String::as_str))?;
    Ok(ExitCode::SUCCESS)
}

fn verify_command(proof: &Path, result: &Path, key: &Path) -> anyhow::Result<ExitCode> {
    let proof_text =
        fs::read_to_string(proof).with_context(|| format!("reading {}", proof.display()))?;
    let proof: AuthenticityProof = serde_json::from_str(&proof_text)
        .with_context(|| format!("parsing proof {}", proof.display()))?;
    let result_bytes = fs::read(result).with_context(|| format!("reading {}", result.display()))?;
    let key_text =
        fs::read_to_string(key).with_context(|| format!("reading {}", key.display()))?;
    let key_bytes: [u8; 32] = hex::decode(key_text.trim())
        .ok()
        .and_then(|bytes| bytes.try_into().ok())
        .with_context(|| format!("{}: expected 64 hex characters", key.display()))?;

    if verify_proof(&result_bytes, &proof, &key_bytes) {
        stream(["proof verified"])?;
        Ok(ExitCode::SUCCESS)
    } else {
        stream(["proof rejected"])?;
        Ok(ExitCode::FAILURE)
    }
}

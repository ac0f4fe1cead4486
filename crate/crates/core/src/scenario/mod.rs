//! End-to-end scenario engine: loads a config, runs the full network
//! (market, reporting, nodes, consensus) block by block, and emits an
//! event log plus metrics derived from that log alone, so replaying the
//! log reproduces the metrics exactly.

pub mod config;
pub mod metrics;
pub mod runner;

pub use config::{load_config, parse_config, ConfigError, ScenarioConfig};
pub use metrics::{metrics_from_events, metrics_from_log, MetricsBuilder};
pub use runner::{run_scenario, ScenarioOutcome};

use thiserror::Error;

use crate::consensus::ConsensusError;
use crate::ledger::LedgerError;
use crate::market::MarketError;
use crate::query::QueryError;
use crate::reporting::ReportingError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fixture error: {0}")]
    Fixture(#[from] QueryError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Reporting(#[from] ReportingError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("invariant violated at height {height}: {reason}")]
    InvariantViolated { height: u64, reason: String },
    #[error("malformed log line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
    #[error("malformed payload in event {seq} ({topic}): {reason}")]
    MalformedPayload { seq: u64, topic: String, reason: String },
}

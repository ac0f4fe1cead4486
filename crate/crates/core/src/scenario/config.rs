//! Scenario configuration: a TOML document (JSON accepted too) that fully
//! determines a run together with its seed.
//!
//! Node behaviors are written as strings: `honest`, `lazy`, `random`, or
//! `colluding(group,value)` where `value` is `true`, `false`, or an
//! integer in the SLA's scaled units; the group tag is bookkeeping for the
//! config author and does not change behavior. Unknown names fail the
//! load, not the run.
//!
//! Account funding: reporter accounts get exactly their scripted `stake`
//! (vote weights are balances, so they stay exact); challenger and staker
//! accounts get their scripted amounts plus headroom for flat fees.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::answer::AnswerValue;
use crate::consensus::AnswerDomain;
use crate::ledger::{Address, TokenAmount};
use crate::market::{AggregatorId, SlaProposal};
use crate::node::NodeBehavior;
use crate::query::QuerySpec;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("unknown behavior {0:?} (expected honest, lazy, random, or colluding(group,value))")]
    UnknownBehavior(String),
    #[error("bad colluding spec {spec:?}: {reason}")]
    BadColluding { spec: String, reason: String },
    #[error("inquiry {index}: dispute pool {dispute} is below the challenge deposit of 100")]
    DisputeBelowDeposit { index: usize, dispute: u64 },
}

fn default_node_balance() -> u64 {
    1_000
}

fn default_purchaser_balance() -> u64 {
    1_000_000
}

fn one() -> u32 {
    1
}

fn default_dispute() -> u64 {
    100
}

fn default_challenger_balance() -> u64 {
    100
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeeConfig {
    pub flat: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub behavior: String,
    #[serde(default = "default_node_balance")]
    pub balance: u64,
    /// Expands to this many identical nodes.
    #[serde(default = "one")]
    pub count: u32,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaScript {
    /// Proposal height.
    #[serde(default)]
    pub at: u64,
    pub query: QuerySpec,
    pub oracles_needed: u32,
    pub bidding_window: u64,
    #[serde(default)]
    pub commit_window: Option<u64>,
    #[serde(default)]
    pub reveal_window: Option<u64>,
    pub penalty: u64,
    pub reward: u64,
    pub aggregator: AggregatorId,
    #[serde(default)]
    pub min_reputation: f64,
    #[serde(default)]
    pub numeric_scale: u32,
    /// Scripted ground truth, for scoring only; the run never reads it.
    #[serde(default)]
    pub truth: Option<AnswerValue>,
}

impl SlaScript {
    pub fn to_proposal(&self, reputation_contract: Address) -> SlaProposal {
        SlaProposal {
            query: self.query.clone(),
            oracles_needed: self.oracles_needed,
            bidding_window: self.bidding_window,
            commit_window: self.commit_window,
            reveal_window: self.reveal_window,
            penalty: TokenAmount(self.penalty),
            reward: TokenAmount(self.reward),
            aggregator: self.aggregator,
            reputation_contract,
            min_reputation: self.min_reputation,
            numeric_scale: self.numeric_scale,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReporterScript {
    /// Initial balance, which is also the vote weight at submit time.
    pub stake: u64,
    pub answer: AnswerValue,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeScript {
    pub claimed: AnswerValue,
    /// Total stake placed behind the original answer.
    #[serde(default)]
    pub support: u64,
    /// Total dispute pool including the challenger's 100-unit deposit.
    #[serde(default = "default_dispute")]
    pub dispute: u64,
    /// Blocks until the challenge resolves; engine default when absent.
    #[serde(default)]
    pub window: Option<u64>,
    #[serde(default = "default_challenger_balance")]
    pub challenger_balance: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InquiryScript {
    pub question: String,
    pub domain: AnswerDomain,
    pub quorum: u32,
    pub deposit: u64,
    /// Height at which the inquiry opens and all reports are filed.
    #[serde(default)]
    pub at: u64,
    #[serde(default)]
    pub truth: Option<AnswerValue>,
    /// Demonstration flag: weigh reporters one-per-head instead of by
    /// stake, making the round Sybil-able.
    #[serde(default)]
    pub head_count: bool,
    pub reporters: Vec<ReporterScript>,
    #[serde(default)]
    pub challenge: Option<ChallengeScript>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub blocks: u64,
    #[serde(default)]
    pub fees: Option<FeeConfig>,
    /// Fixture manifest path, resolved relative to the config file.
    #[serde(default)]
    pub fixtures: Option<String>,
    /// Fixtures given directly in the config, key to content.
    #[serde(default)]
    pub fixtures_inline: BTreeMap<String, String>,
    #[serde(default = "default_purchaser_balance")]
    pub purchaser_balance: u64,
    #[serde(default)]
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub slas: Vec<SlaScript>,
    #[serde(default)]
    pub inquiries: Vec<InquiryScript>,
}

impl ScenarioConfig {
    /// Expands node entries into one `(balance, behavior)` per node and
    /// validates every behavior name.
    pub fn expanded_nodes(&self) -> Result<Vec<(u64, NodeBehavior)>, ConfigError> {
        let mut expanded = Vec::new();
        for node in &self.nodes {
            let behavior = parse_behavior(&node.behavior)?;
            for _ in 0..node.count {
                expanded.push((node.balance, behavior.clone()));
            }
        }
        Ok(expanded)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.expanded_nodes()?;
        for (index, inquiry) in self.inquiries.iter().enumerate() {
            if let Some(challenge) = &inquiry.challenge {
                if challenge.dispute < 100 {
                    return Err(ConfigError::DisputeBelowDeposit {
                        index,
                        dispute: challenge.dispute,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn parse_behavior(spec: &str) -> Result<NodeBehavior, ConfigError> {
    match spec {
        "honest" => Ok(NodeBehavior::Honest),
        "lazy" => Ok(NodeBehavior::Lazy),
        "random" => Ok(NodeBehavior::Random),
        other => {
            let args = other
                .strip_prefix("colluding(")
                .and_then(|rest| rest.strip_suffix(')'))
                .ok_or_else(|| ConfigError::UnknownBehavior(other.to_string()))?;
            let (group, value) = args
                .split_once(',')
                .ok_or_else(|| ConfigError::BadColluding {
                    spec: other.to_string(),
                    reason: "expected colluding(group,value)".into(),
                })?;
            group.trim().parse::<u32>().map_err(|_| ConfigError::BadColluding {
                spec: other.to_string(),
                reason: format!("group {group:?} is not an integer"),
            })?;
            let value = parse_answer_literal(value.trim()).ok_or_else(|| {
                ConfigError::BadColluding {
                    spec: other.to_string(),
                    reason: format!("value {value:?} is not true, false, or an integer"),
                }
            })?;
            Ok(NodeBehavior::Colluding { value })
        }
    }
}

fn parse_answer_literal(text: &str) -> Option<AnswerValue> {
    match text {
        "true" => Some(AnswerValue::Bool(true)),
        "false" => Some(AnswerValue::Bool(false)),
        other => other.parse::<i128>().ok().map(AnswerValue::Numeric),
    }
}

/// Parses config text. TOML by default; JSON when `json` is set. Syntax
/// errors carry line/column positions, shape errors the field path.
///
/// TOML is parsed to a value tree first and bridged through JSON: the
/// TOML deserializer refuses i128 targets outright, while TOML integers
/// are i64 anyway, so the bridge loses nothing and numeric answer
/// literals stay one type everywhere.
pub fn parse_config(text: &str, json: bool) -> Result<ScenarioConfig, ConfigError> {
    let parse = |e: &dyn std::fmt::Display| ConfigError::Parse(e.to_string());
    let config: ScenarioConfig = if json {
        let mut deserializer = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut deserializer).map_err(|e| parse(&e))?
    } else {
        let value: toml::Value = toml::from_str(text).map_err(|e| parse(&e))?;
        let value = serde_json::to_value(value).map_err(|e| parse(&e))?;
        serde_path_to_error::deserialize(value).map_err(|e| parse(&e))?
    };
    config.validate()?;
    Ok(config)
}

/// Loads a config file, treating `.json` as JSON and anything else as
/// TOML, and resolves the fixture manifest path against the config's
/// directory.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|ext| ext == "json");
    let mut config = parse_config(&text, json)?;
    if let (Some(fixtures), Some(parent)) = (&config.fixtures, path.parent()) {
        config.fixtures = Some(parent.join(fixtures).to_string_lossy().into_owned());
    }
    Ok(config)
}

//! Drives a configured scenario block by block.
//!
//! Per-block order is fixed: scripted proposals, bidding finalization,
//! node observation, bids, reports, aggregation, inquiry scripts,
//! challenge resolution, then a ledger conservation check before the
//! block advances. Any invariant breach aborts the run with an error
//! naming the height.

use std::path::Path;

use crate::consensus::{ChallengeId, ConsensusEngine, ConsensusError, StakeSide, WeightMode};
use crate::ledger::{Address, BlockHeight, Ledger, TokenAmount};
use crate::market::{MarketError, OracleMarket, SlaStatus};
use crate::node::OracleNode;
use crate::query::{FixtureRegistry, QueryEngine};
use crate::reporting::ReportingContract;

use super::config::ScenarioConfig;
use super::metrics::{
    metrics_from_events, InquiryTruthPayload, ScenarioStartPayload, SlaTruthPayload,
};
use super::ScenarioError;

pub struct ScenarioOutcome {
    /// Exported event log, one `height seq emitter topic payload` line
    /// per event.
    pub log: String,
    /// Line-delimited JSON metrics derived from that log.
    pub metrics: Vec<String>,
}

struct InquiryAccounts {
    reporters: Vec<Address>,
    challenger: Option<Address>,
    supporter: Option<Address>,
    disputer: Option<Address>,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let node_specs = config.expanded_nodes()?;

    let mut registry = match &config.fixtures {
        Some(path) => FixtureRegistry::load_manifest(Path::new(path))?,
        None => FixtureRegistry::default(),
    };
    for (key, content) in &config.fixtures_inline {
        registry.insert(key, content);
    }
    let engine = QueryEngine::new(config.seed, registry);

    let mut ledger = Ledger::new();
    let scenario_account = ledger.create_account(TokenAmount::ZERO)?;
    let flat_fee = config.fees.as_ref().map_or(0, |f| f.flat);
    if flat_fee > 0 {
        ledger.enable_flat_fee(TokenAmount(flat_fee));
    }
    let mut market = OracleMarket::new(&mut ledger)?;
    let mut reporting = ReportingContract::new(&mut ledger)?;
    let mut consensus = ConsensusEngine::new(&mut ledger)?;
    let purchaser = ledger.create_account(TokenAmount(config.purchaser_balance))?;
    let reputation_contract = market.address();

    let mut nodes = Vec::new();
    for (index, (balance, behavior)) in node_specs.into_iter().enumerate() {
        let address = ledger.create_account(TokenAmount(balance))?;
        nodes.push(OracleNode::new(index as u64, address, behavior, config.seed));
    }

    // Script accounts are created up front so addresses depend only on
    // the config, never on when a script happens to fire.
    let mut inquiry_accounts = Vec::new();
    for script in &config.inquiries {
        let reporters = script
            .reporters
            .iter()
            .map(|r| ledger.create_account(TokenAmount(r.stake)))
            .collect::<Result<Vec<_>, _>>()?;
        let (challenger, supporter, disputer) = match &script.challenge {
            Some(challenge) => {
                let challenger =
                    ledger.create_account(TokenAmount(challenge.challenger_balance + 4 * flat_fee))?;
                let supporter = if challenge.support > 0 {
                    Some(ledger.create_account(TokenAmount(challenge.support + 2 * flat_fee))?)
                } else {
                    None
                };
                // The challenger's fixed 100-unit deposit seeds the
                // dispute pool; a separate staker covers the rest.
                let extra = challenge.dispute - 100;
                let disputer = if extra > 0 {
                    Some(ledger.create_account(TokenAmount(extra + 2 * flat_fee))?)
                } else {
                    None
                };
                (Some(challenger), supporter, disputer)
            }
            None => (None, None, None),
        };
        inquiry_accounts.push(InquiryAccounts { reporters, challenger, supporter, disputer });
    }

    let start = serde_json::to_vec(&ScenarioStartPayload {
        seed: config.seed,
        blocks: config.blocks,
    })
    .expect("payload serializes");
    ledger.emit_event(scenario_account, "scenario_start", start);

    let mut open_challenges: Vec<(ChallengeId, BlockHeight)> = Vec::new();

    for _ in 0..config.blocks {
        let height = ledger.height();

        for script in config.slas.iter().filter(|s| s.at == height.0) {
            let proposal = script.to_proposal(reputation_contract);
            let sla = market.propose_sla(&mut ledger, purchaser, proposal)?;
            if let Some(truth) = &script.truth {
                let payload = serde_json::to_vec(&SlaTruthPayload { sla, truth: truth.clone() })
                    .expect("payload serializes");
                ledger.emit_event(scenario_account, "sla_truth", payload);
            }
        }

        let bidding_over: Vec<_> = market
            .sla_ids()
            .filter(|id| {
                let record = market.sla(*id).expect("listed id resolves");
                record.status == SlaStatus::Bidding && height >= record.bidding_deadline()
            })
            .collect();
        for sla in bidding_over {
            match market.finalize_sla(&mut ledger, sla) {
                // A voided SLA refunds everyone and stays in the log.
                Ok(_) | Err(MarketError::Voided { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }

        for node in &mut nodes {
            node.observe_and_run(&ledger, &engine);
        }
        for node in &mut nodes {
            node.maybe_bid(&mut ledger, &mut market);
        }
        for node in &mut nodes {
            for sla in node.tracked_slas() {
                node.report(&mut ledger, &mut market, &mut reporting, sla);
            }
        }

        let reveal_over: Vec<_> = market
            .sla_ids()
            .filter(|id| {
                let record = market.sla(*id).expect("listed id resolves");
                record.status == SlaStatus::Active
                    && record.reveal_phase().is_some_and(|(_, end)| height >= end)
            })
            .collect();
        for sla in reveal_over {
            reporting.finalize_aggregation(&mut ledger, &mut market, sla)?;
        }

        for (script, accounts) in config
            .inquiries
            .iter()
            .zip(&inquiry_accounts)
            .filter(|(s, _)| s.at == height.0)
        {
            let mode = if script.head_count { WeightMode::HeadCount } else { WeightMode::Stake };
            consensus.set_weight_mode(mode);
            let inquiry = consensus.open_inquiry(
                &mut ledger,
                &script.question,
                script.domain,
                script.quorum,
                TokenAmount(script.deposit),
            )?;
            if let Some(truth) = &script.truth {
                let payload =
                    serde_json::to_vec(&InquiryTruthPayload { inquiry, truth: truth.clone() })
                        .expect("payload serializes");
                ledger.emit_event(scenario_account, "inquiry_truth", payload);
            }
            for (reporter, report) in accounts.reporters.iter().zip(&script.reporters) {
                match consensus.submit_report(&mut ledger, inquiry, *reporter, report.answer.clone())
                {
                    // Reports past the quorum are scripted noise; the
                    // round has already resolved.
                    Ok(()) | Err(ConsensusError::QuorumMet) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if let Some(challenge) = &script.challenge {
                if let Some(window) = challenge.window {
                    consensus.set_challenge_window(window);
                }
                let challenger = accounts.challenger.expect("challenge script funds a challenger");
                let id = consensus.open_challenge(
                    &mut ledger,
                    inquiry,
                    challenger,
                    challenge.claimed.clone(),
                )?;
                if let Some(supporter) = accounts.supporter {
                    consensus.stake_side(
                        &mut ledger,
                        id,
                        supporter,
                        StakeSide::SupportOriginal,
                        TokenAmount(challenge.support),
                    )?;
                }
                if let Some(disputer) = accounts.disputer {
                    consensus.stake_side(
                        &mut ledger,
                        id,
                        disputer,
                        StakeSide::SupportChallenge,
                        TokenAmount(challenge.dispute - 100),
                    )?;
                }
                let deadline = consensus.challenge(id)?.deadline;
                open_challenges.push((id, deadline));
            }
        }

        let due: Vec<_> = open_challenges
            .iter()
            .filter(|(_, deadline)| height >= *deadline)
            .map(|(id, _)| *id)
            .collect();
        open_challenges.retain(|(_, deadline)| height < *deadline);
        for id in due {
            consensus.resolve_challenge(&mut ledger, id)?;
        }

        ledger.check_conservation().map_err(|e| ScenarioError::InvariantViolated {
            height: height.0,
            reason: e.to_string(),
        })?;
        ledger.advance_block();
    }

    let log = ledger.export_events();
    let metrics = metrics_from_events(ledger.events())?;
    Ok(ScenarioOutcome { log, metrics })
}

//! The on-chain oracle market: reputation records, SLA proposals with
//! penalty-backed bidding, deterministic oracle selection, validity
//! feedback, and reward settlement.
//!
//! Lifecycle: a purchaser proposes an SLA (reward escrowed immediately),
//! oracles bid within the bidding window by escrowing the penalty amount,
//! and after the window the proposal is finalized: the top bidders by
//! reputation are selected, everyone else is refunded. Reporting happens
//! elsewhere; this module receives per-oracle validity verdicts, releases
//! or forfeits penalty escrows accordingly, and finally splits the reward.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::AnswerValue;
use crate::ledger::{Address, BlockHeight, EscrowId, Ledger, LedgerError, TokenAmount};
use crate::query::QuerySpec;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlaId(pub u64);

impl fmt::Debug for SlaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SlaId({})", self.0)
    }
}

impl fmt::Display for SlaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How reveals are combined into the collective answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorId {
    /// Boolean threshold: answer true iff at least `m` of the SLA's
    /// oracles reveal true.
    BooleanThreshold { m: u32 },
    Mean,
    Median,
    /// Mean after rejecting values outside the 3-MAD band around the median.
    Trimmed,
    /// Mean weighted by current reputation scores.
    ReputationWeightedMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlaProposal {
    pub query: QuerySpec,
    pub oracles_needed: u32,
    /// Blocks during which bids are accepted, starting at the proposal.
    pub bidding_window: u64,
    /// Defaults to `bidding_window` when absent.
    #[serde(default)]
    pub commit_window: Option<u64>,
    /// Defaults to `bidding_window` when absent.
    #[serde(default)]
    pub reveal_window: Option<u64>,
    /// Escrowed by each bidder; forfeited on invalid or missing response.
    pub penalty: TokenAmount,
    /// Total reward, escrowed from the purchaser at proposal time.
    pub reward: TokenAmount,
    pub aggregator: AggregatorId,
    /// Must name this market's reputation contract.
    pub reputation_contract: Address,
    /// Minimum reputation score a bidder must hold, in [0, 1].
    pub min_reputation: f64,
    /// Numeric answers are integers counting `10^-scale` units.
    #[serde(default)]
    pub numeric_scale: u32,
}

impl SlaProposal {
    pub fn commit_window(&self) -> u64 {
        self.commit_window.unwrap_or(self.bidding_window)
    }

    pub fn reveal_window(&self) -> u64 {
        self.reveal_window.unwrap_or(self.bidding_window)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlaStatus {
    Bidding,
    Active,
    Aggregated,
    Settled,
    /// Terminal: finalization failed for lack of qualified bids; all
    /// escrows were refunded.
    Voided,
}

/// Performance counters backing the reputation score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationRecord {
    /// Times selected for an SLA.
    pub assigned: u64,
    /// Times a well-formed reveal was delivered.
    pub completed: u64,
    /// Times the response was judged valid.
    pub valid: u64,
    /// Times the penalty escrow was forfeited.
    pub penalized: u64,
}

impl ReputationRecord {
    /// Laplace-smoothed success rate with prior weight 2: an oracle with no
    /// history scores 0.5, ten valid of ten assigned scores 11/12.
    pub fn score(&self) -> f64 {
        (self.valid as f64 + 1.0) / (self.assigned as f64 + 2.0)
    }

    /// Exact comparison of two scores via cross-multiplication, avoiding
    /// any float rounding in selection order.
    fn score_cmp(&self, other: &ReputationRecord) -> std::cmp::Ordering {
        let lhs = (self.valid as u128 + 1) * (other.assigned as u128 + 2);
        let rhs = (other.valid as u128 + 1) * (self.assigned as u128 + 2);
        lhs.cmp(&rhs)
    }
}

#[derive(Clone, Debug)]
pub struct OracleBid {
    pub oracle: Address,
    pub bid_height: BlockHeight,
    pub deposit: EscrowId,
    /// Reputation counters snapshotted at bid time; selection ranks on these.
    score_at_bid: ReputationRecord,
}

#[derive(Debug)]
pub struct SlaRecord {
    pub purchaser: Address,
    pub proposal: SlaProposal,
    pub status: SlaStatus,
    pub proposal_height: BlockHeight,
    pub bids: Vec<OracleBid>,
    pub selected: Vec<Address>,
    /// Penalty escrows of currently-selected oracles.
    pub deposits: BTreeMap<Address, EscrowId>,
    pub finalize_height: Option<BlockHeight>,
    reward_escrow: EscrowId,
    /// Validity verdicts recorded after aggregation, one per selected oracle.
    pub validity: BTreeMap<Address, bool>,
    completions: BTreeSet<Address>,
    /// The purchaser's callback slot: the delivered collective answer
    /// (None once aggregated means the round was undecided).
    pub answer: Option<AnswerValue>,
    pub answer_height: Option<BlockHeight>,
}

impl SlaRecord {
    pub fn bidding_deadline(&self) -> BlockHeight {
        self.proposal_height.plus(self.proposal.bidding_window)
    }

    /// Commit phase: `[finalize, finalize + commit_window)`.
    pub fn commit_phase(&self) -> Option<(BlockHeight, BlockHeight)> {
        let start = self.finalize_height?;
        Some((start, start.plus(self.proposal.commit_window())))
    }

    /// Reveal phase: the commit window's end, open for `reveal_window` blocks.
    pub fn reveal_phase(&self) -> Option<(BlockHeight, BlockHeight)> {
        let (_, commit_end) = self.commit_phase()?;
        Some((commit_end, commit_end.plus(self.proposal.reveal_window())))
    }

    pub fn is_selected(&self, oracle: Address) -> bool {
        self.selected.contains(&oracle)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MarketError {
    #[error("unknown SLA {0}")]
    UnknownSla(SlaId),
    #[error("SLA {sla} is {status:?}, operation needs {needs:?}")]
    WrongStatus { sla: SlaId, status: SlaStatus, needs: SlaStatus },
    #[error("oracles_needed must be >= 1")]
    NoOraclesRequested,
    #[error("bidding_window must be >= 1")]
    ZeroBiddingWindow,
    #[error("proposal names a foreign reputation contract")]
    ForeignReputationContract,
    #[error("bidding window closed at height {deadline}")]
    BiddingClosed { deadline: BlockHeight },
    #[error("bidding window still open until height {deadline}")]
    BiddingStillOpen { deadline: BlockHeight },
    #[error("oracle reputation {score:.4} below required {required:.4}")]
    Unqualified { score: f64, required: f64 },
    #[error("duplicate bid from {0}")]
    DuplicateBid(Address),
    #[error("SLA {sla} voided: {bids} bids for {needed} oracles")]
    Voided { sla: SlaId, bids: usize, needed: u32 },
    #[error("oracle {0} was not selected")]
    NotSelected(Address),
    #[error("validity already recorded for {0}")]
    ValidityAlreadyRecorded(Address),
    #[error("completion already noted for {0}")]
    CompletionAlreadyNoted(Address),
    #[error("validity records missing for {missing} oracles")]
    ValidityIncomplete { missing: usize },
    #[error("manual selection needs {needed} distinct oracles, got {got}")]
    BadManualSelection { needed: u32, got: usize },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Event payloads, serialized as compact JSON.
#[derive(Serialize, Deserialize)]
pub struct SlaProposedPayload {
    pub sla: SlaId,
    pub purchaser: Address,
    pub proposal: SlaProposal,
}

#[derive(Serialize, Deserialize)]
pub struct SlaFinalizedPayload {
    pub sla: SlaId,
    pub selected: Vec<Address>,
}

#[derive(Serialize, Deserialize)]
pub struct BidSubmittedPayload {
    pub sla: SlaId,
    pub oracle: Address,
}

#[derive(Serialize, Deserialize)]
pub struct SlaVoidedPayload {
    pub sla: SlaId,
}

#[derive(Serialize, Deserialize)]
pub struct ValidityRecordedPayload {
    pub sla: SlaId,
    pub oracle: Address,
    pub valid: bool,
    /// Penalty units forfeited to the purchaser (0 when valid).
    pub forfeited: u64,
}

#[derive(Serialize, Deserialize)]
pub struct SlaSettledPayload {
    pub sla: SlaId,
    pub share: u64,
    pub remainder: u64,
}

pub struct OracleMarket {
    /// The market's own account; also serves as its reputation contract id.
    address: Address,
    reputation: BTreeMap<Address, ReputationRecord>,
    slas: BTreeMap<SlaId, SlaRecord>,
    next_sla: u64,
}

impl OracleMarket {
    pub fn new(ledger: &mut Ledger) -> Result<Self, LedgerError> {
        Ok(OracleMarket {
            address: ledger.create_account(TokenAmount::ZERO)?,
            reputation: BTreeMap::new(),
            slas: BTreeMap::new(),
            next_sla: 0,
        })
    }

    pub fn address(&self) -> Address {
        self.address
    }

    /// The reputation contract's address (the market account itself).
    pub fn reputation_contract(&self) -> Address {
        self.address
    }

    pub fn sla(&self, sla: SlaId) -> Result<&SlaRecord, MarketError> {
        self.slas.get(&sla).ok_or(MarketError::UnknownSla(sla))
    }

    pub fn sla_ids(&self) -> impl Iterator<Item = SlaId> + '_ {
        self.slas.keys().copied()
    }

    /// The id the next proposal will receive.
    pub fn peek_next_sla(&self) -> SlaId {
        SlaId(self.next_sla)
    }

    pub fn reputation(&self, oracle: Address) -> ReputationRecord {
        self.reputation.get(&oracle).copied().unwrap_or_default()
    }

    pub fn reputation_score(&self, oracle: Address) -> f64 {
        self.reputation(oracle).score()
    }

    fn validate_proposal(&self, proposal: &SlaProposal) -> Result<(), MarketError> {
        if proposal.oracles_needed == 0 {
            return Err(MarketError::NoOraclesRequested);
        }
        if proposal.bidding_window == 0 {
            return Err(MarketError::ZeroBiddingWindow);
        }
        if proposal.reputation_contract != self.address {
            return Err(MarketError::ForeignReputationContract);
        }
        Ok(())
    }

    /// Opens bidding on a new SLA; the full reward is escrowed immediately.
    pub fn propose_sla(
        &mut self,
        ledger: &mut Ledger,
        purchaser: Address,
        proposal: SlaProposal,
    ) -> Result<SlaId, MarketError> {
        self.validate_proposal(&proposal)?;
        ledger.charge_fee(purchaser)?;
        let reward_escrow = ledger.escrow(purchaser, self.address, proposal.reward)?;
        let sla = SlaId(self.next_sla);
        self.next_sla += 1;
        let payload = serde_json::to_vec(&SlaProposedPayload {
            sla,
            purchaser,
            proposal: proposal.clone(),
        })
        .expect("payload serializes");
        ledger.emit_event(self.address, "sla_proposed", payload);
        self.slas.insert(
            sla,
            SlaRecord {
                purchaser,
                proposal,
                status: SlaStatus::Bidding,
                proposal_height: ledger.height(),
                bids: Vec::new(),
                selected: Vec::new(),
                deposits: BTreeMap::new(),
                finalize_height: None,
                reward_escrow,
                validity: BTreeMap::new(),
                completions: BTreeSet::new(),
                answer: None,
                answer_height: None,
            },
        );
        Ok(sla)
    }

    /// The manual-matching path: the purchaser names the oracles directly.
    /// Bidding is skipped but each named oracle still escrows its penalty,
    /// so misbehavior carries the same cost as on the bidding path.
    pub fn propose_with_selection(
        &mut self,
        ledger: &mut Ledger,
        purchaser: Address,
        proposal: SlaProposal,
        selected: Vec<Address>,
    ) -> Result<SlaId, MarketError> {
        self.validate_proposal(&proposal)?;
        let distinct: BTreeSet<Address> = selected.iter().copied().collect();
        if selected.len() != proposal.oracles_needed as usize || distinct.len() != selected.len() {
            return Err(MarketError::BadManualSelection {
                needed: proposal.oracles_needed,
                got: selected.len(),
            });
        }
        ledger.charge_fee(purchaser)?;
        let reward_escrow = ledger.escrow(purchaser, self.address, proposal.reward)?;
        let mut deposits = BTreeMap::new();
        for oracle in &selected {
            let escrow = ledger.escrow(*oracle, self.address, proposal.penalty)?;
            deposits.insert(*oracle, escrow);
            self.reputation.entry(*oracle).or_default().assigned += 1;
        }
        let sla = SlaId(self.next_sla);
        self.next_sla += 1;
        let proposed = serde_json::to_vec(&SlaProposedPayload {
            sla,
            purchaser,
            proposal: proposal.clone(),
        })
        .expect("payload serializes");
        ledger.emit_event(self.address, "sla_proposed", proposed);
        let finalized = serde_json::to_vec(&SlaFinalizedPayload { sla, selected: selected.clone() })
            .expect("payload serializes");
        ledger.emit_event(self.address, "sla_finalized", finalized);
        self.slas.insert(
            sla,
            SlaRecord {
                purchaser,
                proposal,
                status: SlaStatus::Active,
                proposal_height: ledger.height(),
                bids: Vec::new(),
                selected,
                deposits,
                finalize_height: Some(ledger.height()),
                reward_escrow,
                validity: BTreeMap::new(),
                completions: BTreeSet::new(),
                answer: None,
                answer_height: None,
            },
        );
        Ok(sla)
    }

    /// Places a penalty-backed bid. The bidder's reputation is snapshotted
    /// so selection ranks by standing at bid time.
    pub fn submit_bid(
        &mut self,
        ledger: &mut Ledger,
        oracle: Address,
        sla: SlaId,
    ) -> Result<(), MarketError> {
        let market_address = self.address;
        let score_at_bid = self.reputation(oracle);
        let record = self.slas.get_mut(&sla).ok_or(MarketError::UnknownSla(sla))?;
        if record.status != SlaStatus::Bidding {
            return Err(MarketError::WrongStatus {
                sla,
                status: record.status,
                needs: SlaStatus::Bidding,
            });
        }
        let deadline = record.bidding_deadline();
        if ledger.height() >= deadline {
            return Err(MarketError::BiddingClosed { deadline });
        }
        let score = score_at_bid.score();
        if score < record.proposal.min_reputation {
            return Err(MarketError::Unqualified {
                score,
                required: record.proposal.min_reputation,
            });
        }
        if record.bids.iter().any(|b| b.oracle == oracle) {
            return Err(MarketError::DuplicateBid(oracle));
        }
        ledger.charge_fee(oracle)?;
        let deposit = ledger.escrow(oracle, market_address, record.proposal.penalty)?;
        record.bids.push(OracleBid {
            oracle,
            bid_height: ledger.height(),
            deposit,
            score_at_bid,
        });
        let payload = serde_json::to_vec(&BidSubmittedPayload { sla, oracle })
            .expect("payload serializes");
        ledger.emit_event(market_address, "bid_submitted", payload);
        Ok(())
    }

    /// Closes bidding: ranks bidders by reputation (ties by earlier bid,
    /// then address), selects the top `oracles_needed`, and refunds the
    /// rest. With too few bids the SLA is voided and everything refunded.
    pub fn finalize_sla(
        &mut self,
        ledger: &mut Ledger,
        sla: SlaId,
    ) -> Result<Vec<Address>, MarketError> {
        let market_address = self.address;
        let record = self.slas.get_mut(&sla).ok_or(MarketError::UnknownSla(sla))?;
        if record.status != SlaStatus::Bidding {
            return Err(MarketError::WrongStatus {
                sla,
                status: record.status,
                needs: SlaStatus::Bidding,
            });
        }
        let deadline = record.bidding_deadline();
        if ledger.height() < deadline {
            return Err(MarketError::BiddingStillOpen { deadline });
        }
        let needed = record.proposal.oracles_needed as usize;
        if record.bids.len() < needed {
            for bid in &record.bids {
                ledger.release(bid.deposit, bid.oracle)?;
            }
            ledger.release(record.reward_escrow, record.purchaser)?;
            record.status = SlaStatus::Voided;
            let payload =
                serde_json::to_vec(&SlaVoidedPayload { sla }).expect("payload serializes");
            ledger.emit_event(market_address, "sla_voided", payload);
            let bids = record.bids.len();
            return Err(MarketError::Voided {
                sla,
                bids,
                needed: record.proposal.oracles_needed,
            });
        }

        let mut order: Vec<usize> = (0..record.bids.len()).collect();
        order.sort_by(|&a, &b| {
            let (ba, bb) = (&record.bids[a], &record.bids[b]);
            bb.score_at_bid
                .score_cmp(&ba.score_at_bid)
                .then(ba.bid_height.cmp(&bb.bid_height))
                .then(ba.oracle.cmp(&bb.oracle))
        });
        let chosen: BTreeSet<usize> = order[..needed].iter().copied().collect();

        let mut selected = Vec::with_capacity(needed);
        for (i, bid) in record.bids.iter().enumerate() {
            if chosen.contains(&i) {
                selected.push(bid.oracle);
                record.deposits.insert(bid.oracle, bid.deposit);
            } else {
                ledger.release(bid.deposit, bid.oracle)?;
            }
        }
        selected.sort();
        for oracle in &selected {
            self.reputation.entry(*oracle).or_default().assigned += 1;
        }
        record.selected = selected.clone();
        record.status = SlaStatus::Active;
        record.finalize_height = Some(ledger.height());
        let payload = serde_json::to_vec(&SlaFinalizedPayload { sla, selected: selected.clone() })
            .expect("payload serializes");
        ledger.emit_event(market_address, "sla_finalized", payload);
        Ok(selected)
    }

    /// Notes that a selected oracle delivered a well-formed reveal. Called
    /// by the reporting contract; feeds the `completed` counter.
    pub fn note_completion(&mut self, sla: SlaId, oracle: Address) -> Result<(), MarketError> {
        let record = self.slas.get_mut(&sla).ok_or(MarketError::UnknownSla(sla))?;
        if !record.is_selected(oracle) {
            return Err(MarketError::NotSelected(oracle));
        }
        if !record.completions.insert(oracle) {
            return Err(MarketError::CompletionAlreadyNoted(oracle));
        }
        self.reputation.entry(oracle).or_default().completed += 1;
        Ok(())
    }

    /// Marks the SLA aggregated and stores the collective answer in the
    /// purchaser's callback slot. Called by the reporting contract.
    pub fn deliver_answer(
        &mut self,
        ledger: &mut Ledger,
        sla: SlaId,
        answer: Option<AnswerValue>,
    ) -> Result<(), MarketError> {
        let record = self.slas.get_mut(&sla).ok_or(MarketError::UnknownSla(sla))?;
        if record.status != SlaStatus::Active {
            return Err(MarketError::WrongStatus {
                sla,
                status: record.status,
                needs: SlaStatus::Active,
            });
        }
        record.status = SlaStatus::Aggregated;
        record.answer = answer;
        record.answer_height = Some(ledger.height());
        Ok(())
    }

    /// Records one oracle's verdict: a valid response releases its penalty
    /// escrow back, an invalid or missing one forfeits it to the purchaser.
    pub fn record_validity(
        &mut self,
        ledger: &mut Ledger,
        sla: SlaId,
        oracle: Address,
        was_valid: bool,
    ) -> Result<(), MarketError> {
        let market_address = self.address;
        let record = self.slas.get_mut(&sla).ok_or(MarketError::UnknownSla(sla))?;
        if record.status != SlaStatus::Aggregated {
            return Err(MarketError::WrongStatus {
                sla,
                status: record.status,
                needs: SlaStatus::Aggregated,
            });
        }
        if !record.is_selected(oracle) {
            return Err(MarketError::NotSelected(oracle));
        }
        if record.validity.contains_key(&oracle) {
            return Err(MarketError::ValidityAlreadyRecorded(oracle));
        }
        let escrow = record.deposits[&oracle];
        let forfeited = if was_valid {
            ledger.release(escrow, oracle)?;
            0
        } else {
            let amount = ledger.escrow_amount(escrow)?;
            ledger.release(escrow, record.purchaser)?;
            amount.units()
        };
        record.validity.insert(oracle, was_valid);
        let rep = self.reputation.entry(oracle).or_default();
        if was_valid {
            rep.valid += 1;
        } else {
            rep.penalized += 1;
        }
        let payload = serde_json::to_vec(&ValidityRecordedPayload {
            sla,
            oracle,
            valid: was_valid,
            forfeited,
        })
        .expect("payload serializes");
        ledger.emit_event(market_address, "validity_recorded", payload);
        Ok(())
    }

    /// Splits the reward equally among the selected oracles (remainder back
    /// to the purchaser) once every validity verdict is in.
    pub fn settle(&mut self, ledger: &mut Ledger, sla: SlaId) -> Result<(), MarketError> {
        let market_address = self.address;
        let record = self.slas.get_mut(&sla).ok_or(MarketError::UnknownSla(sla))?;
        if record.status != SlaStatus::Aggregated {
            return Err(MarketError::WrongStatus {
                sla,
                status: record.status,
                needs: SlaStatus::Aggregated,
            });
        }
        let missing = record.selected.len() - record.validity.len();
        if missing > 0 {
            return Err(MarketError::ValidityIncomplete { missing });
        }
        ledger.release(record.reward_escrow, market_address)?;
        let n = record.selected.len() as u64;
        let share = record.proposal.reward.units() / n;
        let remainder = record.proposal.reward.units() % n;
        for oracle in &record.selected {
            ledger.transfer(market_address, *oracle, TokenAmount(share))?;
        }
        ledger.transfer(market_address, record.purchaser, TokenAmount(remainder))?;
        record.status = SlaStatus::Settled;
        let payload = serde_json::to_vec(&SlaSettledPayload { sla, share, remainder })
            .expect("payload serializes");
        ledger.emit_event(market_address, "sla_settled", payload);
        Ok(())
    }
}

//! Commit-reveal data reporting and the aggregating contract.
//!
//! Selected oracles first post a binding commitment digest, then reveal the
//! value and salt in a later phase; copying a competitor's answer or
//! changing one's own after the fact is thereby impossible. Once the reveal
//! phase closes, the configured aggregator combines reveals into one
//! collective answer, each oracle's validity verdict feeds the reputation
//! contract (releasing or forfeiting its penalty escrow), and the reward is
//! settled.
//!
//! Phase windows anchor at the SLA's finalize height: commits during
//! `[finalize, finalize+commit_window)`, reveals during the following
//! `reveal_window` blocks, aggregation afterwards.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{commitment_digest, AnswerValue, Salt};
use crate::ledger::{Address, BlockHeight, Ledger};
use crate::market::{AggregatorId, MarketError, OracleMarket, SlaId, SlaStatus};
use crate::numeric::{mad_survivors, mean_rounded, median_rounded};

/// Outcome of one aggregation, generic over the reporter key so the same
/// functions serve on-chain rounds (addresses) and node-local sub-pipeline
/// merging (indices).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Aggregation<K: Ord> {
    /// None means the round was undecided.
    pub answer: Option<AnswerValue>,
    pub validity: BTreeMap<K, bool>,
    /// Reporters whose value entered the collective answer.
    pub contributing: Vec<K>,
}

/// Boolean threshold aggregation over `n` expected voters: true once at
/// least `m` vote true, false once enough vote false that `m` trues can no
/// longer be reached, undecided otherwise (only possible with abstentions).
pub fn aggregate_boolean<K: Ord + Clone>(
    reveals: &[(K, bool)],
    threshold_m: u32,
    total_n: u32,
) -> Aggregation<K> {
    assert!(threshold_m <= total_n, "threshold above voter count");
    let trues = reveals.iter().filter(|(_, v)| *v).count() as u32;
    let falses = reveals.len() as u32 - trues;
    let answer = if trues >= threshold_m {
        Some(true)
    } else if falses > total_n - threshold_m {
        // At least n - m + 1 falses: m trues are unreachable.
        Some(false)
    } else {
        None
    };
    let mut validity = BTreeMap::new();
    let mut contributing: Vec<K> = Vec::new();
    for (key, vote) in reveals {
        let valid = match answer {
            Some(a) => *vote == a,
            // Nobody can be blamed for an undecided round.
            None => true,
        };
        validity.insert(key.clone(), valid);
        contributing.push(key.clone());
    }
    contributing.sort();
    Aggregation { answer: answer.map(AnswerValue::Bool), validity, contributing }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumericMethod {
    Mean,
    Median,
    /// Rejects values outside the 3-MAD band around the median, then means
    /// the rest. A zero MAD rejects nothing.
    Trimmed,
}

/// Numeric aggregation. An empty reveal set is undecided. Results are
/// independent of input order.
pub fn aggregate_numeric<K: Ord + Clone>(
    reveals: &[(K, i128)],
    method: NumericMethod,
) -> Aggregation<K> {
    if reveals.is_empty() {
        return Aggregation { answer: None, validity: BTreeMap::new(), contributing: vec![] };
    }
    let values: Vec<i128> = reveals.iter().map(|(_, v)| *v).collect();
    let survivors: Vec<bool> = match method {
        NumericMethod::Trimmed => mad_survivors(&values),
        _ => vec![true; values.len()],
    };
    let surviving: Vec<i128> = values
        .iter()
        .zip(&survivors)
        .filter(|(_, keep)| **keep)
        .map(|(v, _)| *v)
        .collect();
    let answer = match method {
        NumericMethod::Mean | NumericMethod::Trimmed => mean_rounded(&surviving),
        NumericMethod::Median => median_rounded(&surviving),
    };
    let mut validity = BTreeMap::new();
    let mut contributing = Vec::new();
    for ((key, _), keep) in reveals.iter().zip(&survivors) {
        validity.insert(key.clone(), *keep);
        if *keep {
            contributing.push(key.clone());
        }
    }
    contributing.sort();
    Aggregation { answer: Some(AnswerValue::Numeric(answer)), validity, contributing }
}

/// Mean weighted by the given positive weights (reputation scores when
/// called from the contract). Weights are consumed in key order so the
/// float accumulation is reproducible; the result is rounded half away
/// from zero. Exact for |value| below 2^52.
pub fn aggregate_weighted_mean<K: Ord + Clone>(reveals: &[(K, i128, f64)]) -> Aggregation<K> {
    if reveals.is_empty() {
        return Aggregation { answer: None, validity: BTreeMap::new(), contributing: vec![] };
    }
    let mut sorted: Vec<&(K, i128, f64)> = reveals.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut weighted_sum = 0.0f64;
    let mut weight_total = 0.0f64;
    for (_, value, weight) in &sorted {
        assert!(*weight > 0.0, "weights must be positive");
        weighted_sum += *value as f64 * weight;
        weight_total += weight;
    }
    let ratio = weighted_sum / weight_total;
    let rounded = if ratio >= 0.0 { (ratio + 0.5).floor() } else { (ratio - 0.5).ceil() } as i128;
    let mut validity = BTreeMap::new();
    let mut contributing = Vec::new();
    for (key, _, _) in &sorted {
        validity.insert(key.clone(), true);
        contributing.push(key.clone());
    }
    Aggregation { answer: Some(AnswerValue::Numeric(rounded)), validity, contributing }
}

/// Aggregation outcome of a full on-chain round.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationResult {
    pub sla: SlaId,
    pub method: AggregatorId,
    pub answer: Option<AnswerValue>,
    /// One verdict per selected oracle, revealers and absentees alike.
    pub per_oracle_validity: BTreeMap<Address, bool>,
    pub contributing: Vec<Address>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ReportingError {
    #[error("oracle {0} was not selected for this SLA")]
    NotSelected(Address),
    #[error("SLA is {status:?}; reporting needs Active")]
    WrongStatus { status: SlaStatus },
    #[error("commit phase is [{start}, {end}), current height {now}")]
    CommitPhaseClosed { start: BlockHeight, end: BlockHeight, now: BlockHeight },
    #[error("reveal phase is [{start}, {end}), current height {now}")]
    RevealPhaseClosed { start: BlockHeight, end: BlockHeight, now: BlockHeight },
    #[error("duplicate commit from {0}")]
    DuplicateCommit(Address),
    #[error("no commitment from {0}")]
    NoCommitment(Address),
    #[error("reveal does not match commitment; oracle marked invalid")]
    DigestMismatch,
    #[error("oracle {0} already revealed")]
    AlreadyRevealed(Address),
    #[error("aggregation already finalized")]
    AlreadyFinalized,
    #[error("reveal phase still open until {end}")]
    RevealStillOpen { end: BlockHeight },
    #[error(transparent)]
    Market(#[from] MarketError),
}

#[derive(Clone, Debug)]
pub struct Commitment {
    pub digest: [u8; 32],
    pub commit_height: BlockHeight,
}

#[derive(Default)]
struct Round {
    commitments: BTreeMap<Address, Commitment>,
    reveals: BTreeMap<Address, AnswerValue>,
    /// Oracles whose reveal failed the digest check; permanently invalid
    /// for this SLA.
    failed: BTreeSet<Address>,
    finalized: bool,
}

#[derive(Serialize, Deserialize)]
pub struct CommittedPayload {
    pub sla: SlaId,
    pub oracle: Address,
}

#[derive(Serialize, Deserialize)]
pub struct RevealedPayload {
    pub sla: SlaId,
    pub oracle: Address,
}

#[derive(Serialize, Deserialize)]
pub struct RevealRejectedPayload {
    pub sla: SlaId,
    pub oracle: Address,
}

#[derive(Serialize, Deserialize)]
pub struct AggregatedPayload {
    pub sla: SlaId,
    pub answer: Option<AnswerValue>,
    pub contributing: Vec<Address>,
}

pub struct ReportingContract {
    address: Address,
    rounds: BTreeMap<SlaId, Round>,
}

impl ReportingContract {
    pub fn new(ledger: &mut Ledger) -> Result<Self, crate::ledger::LedgerError> {
        Ok(ReportingContract {
            address: ledger.create_account(crate::ledger::TokenAmount::ZERO)?,
            rounds: BTreeMap::new(),
        })
    }

    pub fn address(&self) -> Address {
        self.address
    }

    fn check_active(market: &OracleMarket, sla: SlaId) -> Result<(), ReportingError> {
        let status = market.sla(sla)?.status;
        if status != SlaStatus::Active {
            return Err(ReportingError::WrongStatus { status });
        }
        Ok(())
    }

    /// Stores a binding commitment. One per oracle per SLA, only during the
    /// commit phase; never overwritable.
    pub fn commit(
        &mut self,
        ledger: &mut Ledger,
        market: &OracleMarket,
        sla: SlaId,
        oracle: Address,
        digest: [u8; 32],
    ) -> Result<(), ReportingError> {
        Self::check_active(market, sla)?;
        let record = market.sla(sla)?;
        if !record.is_selected(oracle) {
            return Err(ReportingError::NotSelected(oracle));
        }
        let (start, end) = record.commit_phase().expect("active SLA has phases");
        let now = ledger.height();
        if now < start || now >= end {
            return Err(ReportingError::CommitPhaseClosed { start, end, now });
        }
        let round = self.rounds.entry(sla).or_default();
        if round.commitments.contains_key(&oracle) {
            return Err(ReportingError::DuplicateCommit(oracle));
        }
        ledger.charge_fee(oracle).map_err(MarketError::from)?;
        round.commitments.insert(oracle, Commitment { digest, commit_height: now });
        let payload =
            serde_json::to_vec(&CommittedPayload { sla, oracle }).expect("payload serializes");
        ledger.emit_event(self.address, "committed", payload);
        Ok(())
    }

    /// Opens a commitment. The digest is recomputed from the claimed value
    /// and salt; a mismatch permanently marks the oracle invalid for this
    /// SLA (no second attempt).
    pub fn reveal(
        &mut self,
        ledger: &mut Ledger,
        market: &mut OracleMarket,
        sla: SlaId,
        oracle: Address,
        value: AnswerValue,
        salt: Salt,
    ) -> Result<(), ReportingError> {
        Self::check_active(market, sla)?;
        let record = market.sla(sla)?;
        let (start, end) = record.reveal_phase().expect("active SLA has phases");
        let now = ledger.height();
        if now < start || now >= end {
            return Err(ReportingError::RevealPhaseClosed { start, end, now });
        }
        let round = self.rounds.entry(sla).or_default();
        let commitment = round
            .commitments
            .get(&oracle)
            .ok_or(ReportingError::NoCommitment(oracle))?;
        if round.reveals.contains_key(&oracle) || round.failed.contains(&oracle) {
            return Err(ReportingError::AlreadyRevealed(oracle));
        }
        ledger.charge_fee(oracle).map_err(MarketError::from)?;
        if commitment_digest(sla, oracle, &value, &salt) != commitment.digest {
            round.failed.insert(oracle);
            let payload = serde_json::to_vec(&RevealRejectedPayload { sla, oracle })
                .expect("payload serializes");
            ledger.emit_event(self.address, "reveal_rejected", payload);
            return Err(ReportingError::DigestMismatch);
        }
        round.reveals.insert(oracle, value);
        market.note_completion(sla, oracle)?;
        let payload =
            serde_json::to_vec(&RevealedPayload { sla, oracle }).expect("payload serializes");
        ledger.emit_event(self.address, "revealed", payload);
        Ok(())
    }

    pub fn reveals(&self, sla: SlaId) -> Option<&BTreeMap<Address, AnswerValue>> {
        self.rounds.get(&sla).map(|r| &r.reveals)
    }

    /// Runs the SLA's aggregator over the reveals, delivers the answer,
    /// records one validity verdict per selected oracle (non-revealers are
    /// invalid), and settles the reward.
    pub fn finalize_aggregation(
        &mut self,
        ledger: &mut Ledger,
        market: &mut OracleMarket,
        sla: SlaId,
    ) -> Result<AggregationResult, ReportingError> {
        Self::check_active(market, sla)?;
        let record = market.sla(sla)?;
        let (_, reveal_end) = record.reveal_phase().expect("active SLA has phases");
        if ledger.height() < reveal_end {
            return Err(ReportingError::RevealStillOpen { end: reveal_end });
        }
        let method = record.proposal.aggregator;
        let selected = record.selected.clone();
        let total_n = record.proposal.oracles_needed;
        let round = self.rounds.entry(sla).or_default();
        if round.finalized {
            return Err(ReportingError::AlreadyFinalized);
        }
        round.finalized = true;

        // Split reveals by the type the aggregator expects; a reveal of the
        // wrong shape never counts as a contribution.
        let mut bool_reveals: Vec<(Address, bool)> = Vec::new();
        let mut numeric_reveals: Vec<(Address, i128)> = Vec::new();
        for (oracle, value) in &round.reveals {
            match value {
                AnswerValue::Bool(b) => bool_reveals.push((*oracle, *b)),
                AnswerValue::Numeric(v) => numeric_reveals.push((*oracle, *v)),
                AnswerValue::Bytes(_) => {}
            }
        }

        let aggregation = match method {
            AggregatorId::BooleanThreshold { m } => aggregate_boolean(&bool_reveals, m, total_n),
            AggregatorId::Mean => aggregate_numeric(&numeric_reveals, NumericMethod::Mean),
            AggregatorId::Median => aggregate_numeric(&numeric_reveals, NumericMethod::Median),
            AggregatorId::Trimmed => aggregate_numeric(&numeric_reveals, NumericMethod::Trimmed),
            AggregatorId::ReputationWeightedMean => {
                let weighted: Vec<(Address, i128, f64)> = numeric_reveals
                    .iter()
                    .map(|(oracle, v)| (*oracle, *v, market.reputation_score(*oracle)))
                    .collect();
                aggregate_weighted_mean(&weighted)
            }
        };

        let mut per_oracle_validity = BTreeMap::new();
        for oracle in &selected {
            let valid = aggregation.validity.get(oracle).copied().unwrap_or(false);
            per_oracle_validity.insert(*oracle, valid);
        }

        market.deliver_answer(ledger, sla, aggregation.answer.clone())?;
        let payload = serde_json::to_vec(&AggregatedPayload {
            sla,
            answer: aggregation.answer.clone(),
            contributing: aggregation.contributing.clone(),
        })
        .expect("payload serializes");
        ledger.emit_event(self.address, "aggregated", payload);

        for oracle in &selected {
            market.record_validity(ledger, sla, *oracle, per_oracle_validity[oracle])?;
        }
        market.settle(ledger, sla)?;

        Ok(AggregationResult {
            sla,
            method,
            answer: aggregation.answer,
            per_oracle_validity,
            contributing: aggregation.contributing,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::TokenAmount;
    use crate::market::SlaProposal;
    use crate::query::{DataSourceType, QuerySpec};

    fn bool_reveals(pattern: &[bool]) -> Vec<(usize, bool)> {
        pattern.iter().copied().enumerate().collect()
    }

    #[test]
    fn boolean_threshold_cases() {
        // 5 true of 7 with m=5.
        let agg = aggregate_boolean(&bool_reveals(&[true; 5]), 5, 7);
        assert_eq!(agg.answer, Some(AnswerValue::Bool(true)));

        // 4 true of 7 with m=5: three false make 5 trues unreachable.
        let votes = vec![true, true, true, true, false, false, false];
        let agg = aggregate_boolean(&bool_reveals(&votes), 5, 7);
        assert_eq!(agg.answer, Some(AnswerValue::Bool(false)));

        // Vacuous threshold.
        let agg = aggregate_boolean::<usize>(&[], 0, 0);
        assert_eq!(agg.answer, Some(AnswerValue::Bool(true)));

        // 3 true, 1 false of 7 with m=5: four abstainers leave it open.
        let agg = aggregate_boolean(&bool_reveals(&[true, true, true, false]), 5, 7);
        assert_eq!(agg.answer, None);
        assert!(agg.validity.values().all(|&v| v));
    }

    #[test]
    fn boolean_validity_tracks_answer() {
        let agg = aggregate_boolean(&bool_reveals(&[true, true, true, false]), 3, 4);
        assert_eq!(agg.answer, Some(AnswerValue::Bool(true)));
        assert!(!agg.validity[&3]);
        assert!(agg.validity[&0] && agg.validity[&1] && agg.validity[&2]);
    }

    #[test]
    fn numeric_methods() {
        let reveals: Vec<(usize, i128)> = [10, 10, 10, 10, 10].iter().copied().enumerate().collect();
        assert_eq!(
            aggregate_numeric(&reveals, NumericMethod::Mean).answer,
            Some(AnswerValue::Numeric(10))
        );

        let reveals: Vec<(usize, i128)> = [1, 2, 3].iter().copied().enumerate().collect();
        assert_eq!(
            aggregate_numeric(&reveals, NumericMethod::Median).answer,
            Some(AnswerValue::Numeric(2))
        );

        let reveals: Vec<(usize, i128)> = [10, 11, 12, 11, 100].iter().copied().enumerate().collect();
        let agg = aggregate_numeric(&reveals, NumericMethod::Trimmed);
        assert_eq!(agg.answer, Some(AnswerValue::Numeric(11)));
        assert!(!agg.validity[&4]);
        assert_eq!(agg.contributing, vec![0, 1, 2, 3]);

        assert_eq!(aggregate_numeric::<usize>(&[], NumericMethod::Mean).answer, None);
    }

    #[test]
    fn numeric_order_insensitive() {
        let a: Vec<(usize, i128)> = vec![(0, 10), (1, 11), (2, 100), (3, 12), (4, 11)];
        let mut b = a.clone();
        b.reverse();
        for method in [NumericMethod::Mean, NumericMethod::Median, NumericMethod::Trimmed] {
            let ra = aggregate_numeric(&a, method);
            let rb = aggregate_numeric(&b, method);
            assert_eq!(ra.answer, rb.answer);
            assert_eq!(ra.validity, rb.validity);
            assert_eq!(ra.contributing, rb.contributing);
        }
    }

    #[test]
    fn weighted_mean_reduces_to_mean_with_equal_weights() {
        let reveals: Vec<(usize, i128, f64)> = vec![(0, 10, 0.5), (1, 20, 0.5), (2, 40, 0.5)];
        let plain: Vec<(usize, i128)> = vec![(0, 10), (1, 20), (2, 40)];
        assert_eq!(
            aggregate_weighted_mean(&reveals).answer,
            aggregate_numeric(&plain, NumericMethod::Mean).answer
        );
    }

    #[test]
    fn weighted_mean_follows_heavy_reporter() {
        let reveals: Vec<(usize, i128, f64)> = vec![(0, 100, 0.9), (1, 0, 0.05), (2, 0, 0.05)];
        let AnswerValue::Numeric(v) = aggregate_weighted_mean(&reveals).answer.unwrap() else {
            panic!()
        };
        assert_eq!(v, 90);
    }

    fn setup_round(
        aggregator: AggregatorId,
        n: u32,
    ) -> (Ledger, OracleMarket, ReportingContract, Address, Vec<Address>, SlaId) {
        let mut ledger = Ledger::new();
        let mut market = OracleMarket::new(&mut ledger).unwrap();
        let reporting = ReportingContract::new(&mut ledger).unwrap();
        let purchaser = ledger.create_account(TokenAmount(1_000)).unwrap();
        let oracles: Vec<Address> = (0..n)
            .map(|_| ledger.create_account(TokenAmount(200)).unwrap())
            .collect();
        let proposal = SlaProposal {
            query: QuerySpec::new(DataSourceType::Identity, &["x"]),
            oracles_needed: n,
            bidding_window: 2,
            commit_window: None,
            reveal_window: None,
            penalty: TokenAmount(50),
            reward: TokenAmount(n as u64 * 10),
            aggregator,
            reputation_contract: market.reputation_contract(),
            min_reputation: 0.0,
            numeric_scale: 0,
        };
        let sla = market.propose_sla(&mut ledger, purchaser, proposal).unwrap();
        for oracle in &oracles {
            market.submit_bid(&mut ledger, *oracle, sla).unwrap();
        }
        ledger.advance_block();
        ledger.advance_block();
        market.finalize_sla(&mut ledger, sla).unwrap();
        (ledger, market, reporting, purchaser, oracles, sla)
    }

    fn commit_reveal_finalize(
        values: &[(Address, AnswerValue)],
        reveal_values: &[(Address, AnswerValue)],
        setup: (Ledger, OracleMarket, ReportingContract, Address, Vec<Address>, SlaId),
    ) -> (Ledger, OracleMarket, AggregationResult) {
        let (mut ledger, mut market, mut reporting, _, _, sla) = setup;
        let salt = Salt([9u8; 32]);
        for (oracle, value) in values {
            let digest = commitment_digest(sla, *oracle, value, &salt);
            reporting.commit(&mut ledger, &market, sla, *oracle, digest).unwrap();
        }
        ledger.advance_block();
        ledger.advance_block();
        for (oracle, value) in reveal_values {
            let _ = reporting.reveal(&mut ledger, &mut market, sla, *oracle, value.clone(), salt);
        }
        ledger.advance_block();
        ledger.advance_block();
        let result = reporting.finalize_aggregation(&mut ledger, &mut market, sla).unwrap();
        (ledger, market, result)
    }

    #[test]
    fn full_round_happy_path() {
        let setup = setup_round(AggregatorId::Median, 3);
        let oracles = setup.4.clone();
        let votes: Vec<(Address, AnswerValue)> = oracles
            .iter()
            .map(|o| (*o, AnswerValue::Numeric(42)))
            .collect();
        let (ledger, market, result) = commit_reveal_finalize(&votes, &votes, setup);
        assert_eq!(result.answer, Some(AnswerValue::Numeric(42)));
        assert!(result.per_oracle_validity.values().all(|&v| v));
        // 200 - 50 penalty + 50 back + 10 reward share.
        for oracle in &oracles {
            assert_eq!(ledger.balance(*oracle).unwrap(), TokenAmount(210));
        }
        ledger.check_conservation().unwrap();
        assert_eq!(market.sla(result.sla).unwrap().status, SlaStatus::Settled);
        assert_eq!(market.sla(result.sla).unwrap().answer, Some(AnswerValue::Numeric(42)));
    }

    #[test]
    fn commit_phase_gates() {
        let (mut ledger, market, mut reporting, _, oracles, sla) =
            setup_round(AggregatorId::Median, 3);
        let outsider = Address::from_index(999);
        assert!(matches!(
            reporting.commit(&mut ledger, &market, sla, outsider, [0; 32]),
            Err(ReportingError::NotSelected(_))
        ));
        reporting.commit(&mut ledger, &market, sla, oracles[0], [1; 32]).unwrap();
        assert!(matches!(
            reporting.commit(&mut ledger, &market, sla, oracles[0], [2; 32]),
            Err(ReportingError::DuplicateCommit(_))
        ));
        // Into the reveal phase: commits closed.
        ledger.advance_block();
        ledger.advance_block();
        assert!(matches!(
            reporting.commit(&mut ledger, &market, sla, oracles[1], [3; 32]),
            Err(ReportingError::CommitPhaseClosed { .. })
        ));
    }

    #[test]
    fn reveal_requires_matching_digest() {
        let (mut ledger, mut market, mut reporting, purchaser, oracles, sla) =
            setup_round(AggregatorId::Median, 3);
        let salt = Salt([5u8; 32]);
        let honest = AnswerValue::Numeric(7);
        for oracle in &oracles {
            let digest = commitment_digest(sla, *oracle, &honest, &salt);
            reporting.commit(&mut ledger, &market, sla, *oracle, digest).unwrap();
        }
        ledger.advance_block();
        ledger.advance_block();

        // Altered value fails and bars a retry even with the true value.
        assert_eq!(
            reporting.reveal(
                &mut ledger,
                &mut market,
                sla,
                oracles[0],
                AnswerValue::Numeric(8),
                salt,
            ),
            Err(ReportingError::DigestMismatch)
        );
        assert!(matches!(
            reporting.reveal(&mut ledger, &mut market, sla, oracles[0], honest.clone(), salt),
            Err(ReportingError::AlreadyRevealed(_))
        ));

        // Wrong salt fails too.
        assert_eq!(
            reporting.reveal(
                &mut ledger,
                &mut market,
                sla,
                oracles[1],
                honest.clone(),
                Salt([6u8; 32]),
            ),
            Err(ReportingError::DigestMismatch)
        );

        reporting
            .reveal(&mut ledger, &mut market, sla, oracles[2], honest.clone(), salt)
            .unwrap();
        ledger.advance_block();
        ledger.advance_block();
        let result = reporting.finalize_aggregation(&mut ledger, &mut market, sla).unwrap();
        assert_eq!(result.answer, Some(AnswerValue::Numeric(7)));
        assert!(!result.per_oracle_validity[&oracles[0]]);
        assert!(!result.per_oracle_validity[&oracles[1]]);
        assert!(result.per_oracle_validity[&oracles[2]]);

        // Paid out the 30 reward, got both forfeited penalties.
        assert_eq!(ledger.balance(purchaser).unwrap(), TokenAmount(1_000 - 30 + 50 + 50));
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn reveal_without_commitment_rejected() {
        let (mut ledger, mut market, mut reporting, _, oracles, sla) =
            setup_round(AggregatorId::Median, 3);
        ledger.advance_block();
        ledger.advance_block();
        assert!(matches!(
            reporting.reveal(
                &mut ledger,
                &mut market,
                sla,
                oracles[0],
                AnswerValue::Numeric(1),
                Salt([0; 32]),
            ),
            Err(ReportingError::NoCommitment(_))
        ));
    }

    #[test]
    fn non_revealer_marked_invalid_and_forfeits() {
        let setup = setup_round(AggregatorId::Median, 3);
        let oracles = setup.4.clone();
        let votes: Vec<(Address, AnswerValue)> = oracles
            .iter()
            .map(|o| (*o, AnswerValue::Numeric(5)))
            .collect();
        // All commit, only the first two reveal.
        let (ledger, market, result) = commit_reveal_finalize(&votes, &votes[..2], setup);
        assert_eq!(result.answer, Some(AnswerValue::Numeric(5)));
        assert!(!result.per_oracle_validity[&oracles[2]]);
        let rep = market.reputation(oracles[2]);
        assert_eq!((rep.assigned, rep.completed, rep.valid, rep.penalized), (1, 0, 0, 1));
        // Lazy oracle: 200 - 50 penalty (forfeited) + 10 reward share.
        assert_eq!(ledger.balance(oracles[2]).unwrap(), TokenAmount(160));
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn finalize_gates() {
        let (mut ledger, mut market, mut reporting, _, _, sla) =
            setup_round(AggregatorId::Median, 3);
        assert!(matches!(
            reporting.finalize_aggregation(&mut ledger, &mut market, sla),
            Err(ReportingError::RevealStillOpen { .. })
        ));
        for _ in 0..4 {
            ledger.advance_block();
        }
        reporting.finalize_aggregation(&mut ledger, &mut market, sla).unwrap();
        assert!(matches!(
            reporting.finalize_aggregation(&mut ledger, &mut market, sla),
            Err(ReportingError::WrongStatus { .. })
        ));
    }

    #[test]
    fn undecided_boolean_round_refunds_revealers() {
        let setup = setup_round(AggregatorId::BooleanThreshold { m: 5 }, 7);
        let oracles = setup.4.clone();
        let votes: Vec<(Address, AnswerValue)> = oracles
            .iter()
            .enumerate()
            .map(|(i, o)| (*o, AnswerValue::Bool(i < 3)))
            .collect();
        // Only 4 of 7 commit and reveal: 3 true, 1 false -> undecided.
        let (ledger, market, result) = commit_reveal_finalize(&votes[..4], &votes[..4], setup);
        assert_eq!(result.answer, None);
        assert_eq!(market.sla(result.sla).unwrap().answer, None);
        for oracle in &oracles[..4] {
            assert!(result.per_oracle_validity[oracle]);
        }
        for oracle in &oracles[4..] {
            assert!(!result.per_oracle_validity[oracle]);
        }
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn wrong_shape_reveal_never_contributes() {
        let setup = setup_round(AggregatorId::BooleanThreshold { m: 2 }, 3);
        let oracles = setup.4.clone();
        let votes = vec![
            (oracles[0], AnswerValue::Bool(true)),
            (oracles[1], AnswerValue::Bool(true)),
            (oracles[2], AnswerValue::Numeric(1)),
        ];
        let (_, _, result) = commit_reveal_finalize(&votes, &votes, setup);
        assert_eq!(result.answer, Some(AnswerValue::Bool(true)));
        assert!(!result.per_oracle_validity[&oracles[2]]);
        assert!(!result.contributing.contains(&oracles[2]));
    }
}

//! Truth by consensus for questions only humans can answer: reporters back
//! their answers with matching deposits, the round auto-resolves at quorum
//! by stake weight, dissenters forfeit to the majority, and anyone can
//! challenge the result by out-staking its supporters.
//!
//! Resolution is stake-weighted because head-count voting is trivially
//! Sybil-able: splitting one balance across fresh identities must never
//! change the outcome. A head-count mode exists anyway, to let scenarios
//! demonstrate exactly that attack.
//!
//! Redistribution remainders go to an explicit sink account so token
//! conservation stays assertable to the unit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::AnswerValue;
use crate::ledger::{Address, BlockHeight, EscrowId, Ledger, LedgerError, TokenAmount};
use crate::numeric::weighted_median;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct InquiryId(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ChallengeId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerDomain {
    Boolean,
    /// Answers are indices `0..k`.
    Categorical { k: u32 },
    Numeric,
}

impl AnswerDomain {
    pub fn admits(&self, answer: &AnswerValue) -> bool {
        match (self, answer) {
            (AnswerDomain::Boolean, AnswerValue::Bool(_)) => true,
            (AnswerDomain::Categorical { k }, AnswerValue::Numeric(i)) => {
                *i >= 0 && *i < *k as i128
            }
            (AnswerDomain::Numeric, AnswerValue::Numeric(_)) => true,
            _ => false,
        }
    }
}

/// How report weights are measured: by the reporter's token balance at
/// submission time (the default), or one vote per identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Stake,
    HeadCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InquiryStatus {
    Open,
    Resolved,
    Challenged,
    Final,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub answer: AnswerValue,
    /// Vote weight, captured before the deposit left the balance.
    pub weight: u64,
    deposit: EscrowId,
}

#[derive(Clone, Debug)]
pub struct InquiryRound {
    pub question: String,
    pub domain: AnswerDomain,
    pub quorum: u32,
    pub deposit_required: TokenAmount,
    pub weight_mode: WeightMode,
    pub reports: BTreeMap<Address, Report>,
    pub status: InquiryStatus,
    pub resolved_answer: Option<AnswerValue>,
    pub final_answer: Option<AnswerValue>,
}

impl InquiryRound {
    /// The answer as it currently stands: the challenge outcome if one
    /// finished, otherwise the quorum resolution.
    pub fn standing_answer(&self) -> Option<&AnswerValue> {
        self.final_answer.as_ref().or(self.resolved_answer.as_ref())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StakeSide {
    SupportOriginal,
    SupportChallenge,
}

#[derive(Clone, Debug, Default)]
struct StakePosition {
    amount: u64,
    escrows: Vec<EscrowId>,
}

#[derive(Clone, Debug)]
pub struct Challenge {
    pub inquiry: InquiryId,
    pub challenger: Address,
    pub claimed: AnswerValue,
    pub deadline: BlockHeight,
    support: BTreeMap<Address, StakePosition>,
    dispute: BTreeMap<Address, StakePosition>,
    pub resolved: bool,
}

impl Challenge {
    pub fn support_total(&self) -> u64 {
        self.support.values().map(|p| p.amount).sum()
    }

    pub fn dispute_total(&self) -> u64 {
        self.dispute.values().map(|p| p.amount).sum()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConsensusError {
    #[error("quorum must be at least 1")]
    ZeroQuorum,
    #[error("unknown inquiry {0:?}")]
    UnknownInquiry(InquiryId),
    #[error("unknown challenge {0:?}")]
    UnknownChallenge(ChallengeId),
    #[error("answer does not fit the inquiry's domain")]
    BadDomain,
    #[error("reporting closed: quorum already met")]
    QuorumMet,
    #[error("reporter already reported on this inquiry")]
    DuplicateReporter(Address),
    #[error("stake {stake} below required deposit {required}")]
    InsufficientStake { stake: u64, required: u64 },
    #[error("quorum not met yet ({reports} of {quorum})")]
    BeforeQuorum { reports: u32, quorum: u32 },
    #[error("inquiry is not challengeable in status {status:?}")]
    NotChallengeable { status: InquiryStatus },
    #[error("challenge must claim a different answer")]
    SameAnswer,
    #[error("balance {balance} below challenge deposit {required}")]
    InsufficientFunds { balance: u64, required: u64 },
    #[error("staking closed at height {deadline}")]
    DeadlinePassed { deadline: BlockHeight },
    #[error("challenge open until height {deadline}")]
    BeforeDeadline { deadline: BlockHeight },
    #[error("challenge already resolved")]
    DoubleResolution,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InquiryOpenedPayload {
    pub inquiry: InquiryId,
    pub question: String,
    pub domain: AnswerDomain,
    pub quorum: u32,
    pub deposit: TokenAmount,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportSubmittedPayload {
    pub inquiry: InquiryId,
    pub reporter: Address,
    pub answer: AnswerValue,
    pub weight: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InquiryResolvedPayload {
    pub inquiry: InquiryId,
    pub answer: AnswerValue,
    /// Forfeit share paid to each matching reporter.
    pub share: u64,
    /// Indivisible forfeit remainder sent to the sink.
    pub remainder: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChallengeOpenedPayload {
    pub challenge: ChallengeId,
    pub inquiry: InquiryId,
    pub challenger: Address,
    pub claimed: AnswerValue,
    pub deadline: BlockHeight,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SideStakedPayload {
    pub challenge: ChallengeId,
    pub staker: Address,
    pub side: StakeSide,
    pub amount: TokenAmount,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChallengeFinalizedPayload {
    pub challenge: ChallengeId,
    pub inquiry: InquiryId,
    pub answer: AnswerValue,
    /// Whether the challenge overturned the quorum result.
    pub flipped: bool,
    pub support_total: u64,
    pub dispute_total: u64,
}

pub struct ConsensusEngine {
    address: Address,
    sink: Address,
    weight_mode: WeightMode,
    challenge_deposit: TokenAmount,
    challenge_window: u64,
    inquiries: BTreeMap<InquiryId, InquiryRound>,
    challenges: BTreeMap<ChallengeId, Challenge>,
    next_inquiry: u64,
    next_challenge: u64,
}

impl ConsensusEngine {
    pub fn new(ledger: &mut Ledger) -> Result<Self, LedgerError> {
        Ok(ConsensusEngine {
            address: ledger.create_account(TokenAmount(0))?,
            sink: ledger.create_account(TokenAmount(0))?,
            weight_mode: WeightMode::Stake,
            challenge_deposit: TokenAmount(100),
            challenge_window: 20,
            inquiries: BTreeMap::new(),
            challenges: BTreeMap::new(),
            next_inquiry: 0,
            next_challenge: 0,
        })
    }

    pub fn address(&self) -> Address {
        self.address
    }

    /// Remainders from integer splits accumulate here.
    pub fn sink(&self) -> Address {
        self.sink
    }

    /// Scenario flag: head-count weighting exists to demonstrate the Sybil
    /// attack, not to be used.
    pub fn set_weight_mode(&mut self, mode: WeightMode) {
        self.weight_mode = mode;
    }

    pub fn set_challenge_window(&mut self, blocks: u64) {
        self.challenge_window = blocks;
    }

    pub fn set_challenge_deposit(&mut self, amount: TokenAmount) {
        self.challenge_deposit = amount;
    }

    pub fn inquiry(&self, id: InquiryId) -> Result<&InquiryRound, ConsensusError> {
        self.inquiries.get(&id).ok_or(ConsensusError::UnknownInquiry(id))
    }

    pub fn challenge(&self, id: ChallengeId) -> Result<&Challenge, ConsensusError> {
        self.challenges.get(&id).ok_or(ConsensusError::UnknownChallenge(id))
    }

    pub fn inquiry_ids(&self) -> Vec<InquiryId> {
        self.inquiries.keys().copied().collect()
    }

    /// Opens a reporting round. The question text is opaque: the engine
    /// never interprets it, so ambiguity stays with the humans answering.
    pub fn open_inquiry(
        &mut self,
        ledger: &mut Ledger,
        question: &str,
        domain: AnswerDomain,
        quorum: u32,
        deposit_required: TokenAmount,
    ) -> Result<InquiryId, ConsensusError> {
        if quorum == 0 {
            return Err(ConsensusError::ZeroQuorum);
        }
        let id = InquiryId(self.next_inquiry);
        self.next_inquiry += 1;
        self.inquiries.insert(
            id,
            InquiryRound {
                question: question.to_string(),
                domain,
                quorum,
                deposit_required,
                weight_mode: self.weight_mode,
                reports: BTreeMap::new(),
                status: InquiryStatus::Open,
                resolved_answer: None,
                final_answer: None,
            },
        );
        let payload = serde_json::to_vec(&InquiryOpenedPayload {
            inquiry: id,
            question: question.to_string(),
            domain,
            quorum,
            deposit: deposit_required,
        })
        .expect("payload serializes");
        ledger.emit_event(self.address, "inquiry_opened", payload);
        Ok(id)
    }

    /// Records a deposit-backed report. The reporter's vote weight is their
    /// balance as it stands now, before the deposit is escrowed; reaching
    /// quorum resolves the round on the spot.
    pub fn submit_report(
        &mut self,
        ledger: &mut Ledger,
        inquiry: InquiryId,
        reporter: Address,
        answer: AnswerValue,
    ) -> Result<(), ConsensusError> {
        let round = self.inquiries.get(&inquiry).ok_or(ConsensusError::UnknownInquiry(inquiry))?;
        if round.status != InquiryStatus::Open {
            return Err(ConsensusError::QuorumMet);
        }
        if !round.domain.admits(&answer) {
            return Err(ConsensusError::BadDomain);
        }
        if round.reports.contains_key(&reporter) {
            return Err(ConsensusError::DuplicateReporter(reporter));
        }
        let stake = ledger.balance(reporter)?;
        if stake < round.deposit_required {
            return Err(ConsensusError::InsufficientStake {
                stake: stake.0,
                required: round.deposit_required.0,
            });
        }
        let weight = match round.weight_mode {
            WeightMode::Stake => stake.0,
            WeightMode::HeadCount => 1,
        };
        let deposit_required = round.deposit_required;
        let quorum = round.quorum;

        ledger.charge_fee(reporter)?;
        let deposit = ledger.escrow(reporter, self.address, deposit_required)?;
        let round = self.inquiries.get_mut(&inquiry).expect("checked above");
        round.reports.insert(reporter, Report { answer: answer.clone(), weight, deposit });
        let reports = round.reports.len() as u32;
        let payload = serde_json::to_vec(&ReportSubmittedPayload {
            inquiry,
            reporter,
            answer,
            weight,
        })
        .expect("payload serializes");
        ledger.emit_event(self.address, "report_submitted", payload);

        if reports >= quorum {
            self.resolve(ledger, inquiry)?;
        }
        Ok(())
    }

    /// Computes the consensus answer once quorum is met. Normally this runs
    /// automatically from the quorum-reaching report; calling it afterwards
    /// just returns the recorded answer.
    pub fn resolve_consensus(
        &mut self,
        ledger: &mut Ledger,
        inquiry: InquiryId,
    ) -> Result<AnswerValue, ConsensusError> {
        let round = self.inquiries.get(&inquiry).ok_or(ConsensusError::UnknownInquiry(inquiry))?;
        match round.status {
            InquiryStatus::Open => {
                let reports = round.reports.len() as u32;
                if reports < round.quorum {
                    return Err(ConsensusError::BeforeQuorum { reports, quorum: round.quorum });
                }
                self.resolve(ledger, inquiry)
            }
            _ => Ok(round.standing_answer().expect("resolved round has answer").clone()),
        }
    }

    fn resolve(
        &mut self,
        ledger: &mut Ledger,
        inquiry: InquiryId,
    ) -> Result<AnswerValue, ConsensusError> {
        let round = self.inquiries.get(&inquiry).expect("caller checked");
        let answer = match round.domain {
            AnswerDomain::Numeric => {
                let weighted: Vec<(u128, i128)> = round
                    .reports
                    .values()
                    .filter_map(|r| match r.answer {
                        AnswerValue::Numeric(v) => Some((r.weight as u128, v)),
                        _ => None,
                    })
                    .collect();
                AnswerValue::Numeric(weighted_median(&weighted))
            }
            _ => weighted_mode(round.reports.values().map(|r| (&r.answer, r.weight))),
        };

        let mut matching: Vec<(Address, EscrowId)> = Vec::new();
        let mut forfeited: Vec<EscrowId> = Vec::new();
        let mut forfeit_total: u64 = 0;
        let deposit = round.deposit_required.0;
        for (reporter, report) in &round.reports {
            if report.answer == answer {
                matching.push((*reporter, report.deposit));
            } else {
                forfeited.push(report.deposit);
                forfeit_total += deposit;
            }
        }

        // Dissenters forfeit; the matching majority splits the forfeits
        // equally (deposits are uniform), indivisible remainder to the sink.
        for escrow in forfeited {
            ledger.release(escrow, self.address)?;
        }
        // With no matching reporter (m = 0) everything is remainder.
        let m = matching.len() as u64;
        let share = forfeit_total.checked_div(m).unwrap_or(0);
        let remainder = forfeit_total - share * m;
        for (reporter, escrow) in &matching {
            ledger.release(*escrow, *reporter)?;
            if share > 0 {
                ledger.transfer(self.address, *reporter, TokenAmount(share))?;
            }
        }
        if remainder > 0 {
            ledger.transfer(self.address, self.sink, TokenAmount(remainder))?;
        }

        let round = self.inquiries.get_mut(&inquiry).expect("caller checked");
        round.status = InquiryStatus::Resolved;
        round.resolved_answer = Some(answer.clone());
        let payload = serde_json::to_vec(&InquiryResolvedPayload {
            inquiry,
            answer: answer.clone(),
            share,
            remainder,
        })
        .expect("payload serializes");
        ledger.emit_event(self.address, "inquiry_resolved", payload);
        Ok(answer)
    }

    /// Disputes a resolved answer by escrowing the challenge deposit into
    /// the dispute pool. One challenge per inquiry; the claim must differ
    /// from the resolved answer.
    pub fn open_challenge(
        &mut self,
        ledger: &mut Ledger,
        inquiry: InquiryId,
        challenger: Address,
        claimed: AnswerValue,
    ) -> Result<ChallengeId, ConsensusError> {
        let round = self.inquiries.get(&inquiry).ok_or(ConsensusError::UnknownInquiry(inquiry))?;
        if round.status != InquiryStatus::Resolved {
            return Err(ConsensusError::NotChallengeable { status: round.status });
        }
        if !round.domain.admits(&claimed) {
            return Err(ConsensusError::BadDomain);
        }
        if round.resolved_answer.as_ref() == Some(&claimed) {
            return Err(ConsensusError::SameAnswer);
        }
        let balance = ledger.balance(challenger)?;
        if balance < self.challenge_deposit {
            return Err(ConsensusError::InsufficientFunds {
                balance: balance.0,
                required: self.challenge_deposit.0,
            });
        }

        ledger.charge_fee(challenger)?;
        let escrow = ledger.escrow(challenger, self.address, self.challenge_deposit)?;
        let deadline = BlockHeight(ledger.height().0 + self.challenge_window);
        let id = ChallengeId(self.next_challenge);
        self.next_challenge += 1;
        let mut dispute = BTreeMap::new();
        dispute.insert(
            challenger,
            StakePosition { amount: self.challenge_deposit.0, escrows: vec![escrow] },
        );
        self.challenges.insert(
            id,
            Challenge {
                inquiry,
                challenger,
                claimed: claimed.clone(),
                deadline,
                support: BTreeMap::new(),
                dispute,
                resolved: false,
            },
        );
        self.inquiries.get_mut(&inquiry).expect("checked").status = InquiryStatus::Challenged;
        let payload = serde_json::to_vec(&ChallengeOpenedPayload {
            challenge: id,
            inquiry,
            challenger,
            claimed,
            deadline,
        })
        .expect("payload serializes");
        ledger.emit_event(self.address, "challenge_opened", payload);
        Ok(id)
    }

    /// Escrows stake behind either the original answer or the challenge.
    /// Open to anyone until the deadline; repeat stakes accumulate.
    pub fn stake_side(
        &mut self,
        ledger: &mut Ledger,
        challenge: ChallengeId,
        staker: Address,
        side: StakeSide,
        amount: TokenAmount,
    ) -> Result<(), ConsensusError> {
        let record =
            self.challenges.get(&challenge).ok_or(ConsensusError::UnknownChallenge(challenge))?;
        if record.resolved || ledger.height() >= record.deadline {
            return Err(ConsensusError::DeadlinePassed { deadline: record.deadline });
        }
        ledger.charge_fee(staker)?;
        let escrow = ledger.escrow(staker, self.address, amount)?;
        let record = self.challenges.get_mut(&challenge).expect("checked");
        let pool = match side {
            StakeSide::SupportOriginal => &mut record.support,
            StakeSide::SupportChallenge => &mut record.dispute,
        };
        let position = pool.entry(staker).or_default();
        position.amount += amount.0;
        position.escrows.push(escrow);
        let payload = serde_json::to_vec(&SideStakedPayload { challenge, staker, side, amount })
            .expect("payload serializes");
        ledger.emit_event(self.address, "side_staked", payload);
        Ok(())
    }

    /// Settles a challenge after its deadline: the larger pool wins and
    /// splits the losing pool pro-rata by stake; a tie leaves the original
    /// answer standing and refunds both pools in full.
    pub fn resolve_challenge(
        &mut self,
        ledger: &mut Ledger,
        challenge: ChallengeId,
    ) -> Result<AnswerValue, ConsensusError> {
        let record =
            self.challenges.get(&challenge).ok_or(ConsensusError::UnknownChallenge(challenge))?;
        if record.resolved {
            return Err(ConsensusError::DoubleResolution);
        }
        if ledger.height() < record.deadline {
            return Err(ConsensusError::BeforeDeadline { deadline: record.deadline });
        }
        let inquiry = record.inquiry;
        let support_total = record.support_total();
        let dispute_total = record.dispute_total();
        let support = record.support.clone();
        let dispute = record.dispute.clone();
        let claimed = record.claimed.clone();
        let resolved_answer = self
            .inquiries
            .get(&inquiry)
            .and_then(|r| r.resolved_answer.clone())
            .expect("challenged inquiry was resolved");

        let flipped = dispute_total > support_total;
        let answer = if flipped { claimed } else { resolved_answer };

        if support_total == dispute_total {
            // Tie: original stands, everyone takes their stake back.
            for pool in [&support, &dispute] {
                for (staker, position) in pool {
                    for escrow in &position.escrows {
                        ledger.release(*escrow, *staker)?;
                    }
                }
            }
        } else {
            let (winners, losers, winning_total, losing_total) = if flipped {
                (&dispute, &support, dispute_total, support_total)
            } else {
                (&support, &dispute, support_total, dispute_total)
            };
            for position in losers.values() {
                for escrow in &position.escrows {
                    ledger.release(*escrow, self.address)?;
                }
            }
            let mut distributed: u64 = 0;
            for (staker, position) in winners {
                for escrow in &position.escrows {
                    ledger.release(*escrow, *staker)?;
                }
                let bonus = (losing_total as u128 * position.amount as u128
                    / winning_total as u128) as u64;
                if bonus > 0 {
                    ledger.transfer(self.address, *staker, TokenAmount(bonus))?;
                }
                distributed += bonus;
            }
            let remainder = losing_total - distributed;
            if remainder > 0 {
                ledger.transfer(self.address, self.sink, TokenAmount(remainder))?;
            }
        }

        self.challenges.get_mut(&challenge).expect("checked").resolved = true;
        let round = self.inquiries.get_mut(&inquiry).expect("challenged inquiry exists");
        round.status = InquiryStatus::Final;
        round.final_answer = Some(answer.clone());
        let payload = serde_json::to_vec(&ChallengeFinalizedPayload {
            challenge,
            inquiry,
            answer: answer.clone(),
            flipped,
            support_total,
            dispute_total,
        })
        .expect("payload serializes");
        ledger.emit_event(self.address, "challenge_finalized", payload);
        Ok(answer)
    }
}

/// Highest total weight wins; among equally weighted answers the smallest
/// in canonical value order wins, so ties are deterministic.
fn weighted_mode<'a>(reports: impl Iterator<Item = (&'a AnswerValue, u64)>) -> AnswerValue {
    let mut totals: BTreeMap<&AnswerValue, u128> = BTreeMap::new();
    for (answer, weight) in reports {
        *totals.entry(answer).or_insert(0) += weight as u128;
    }
    let mut best: Option<(&AnswerValue, u128)> = None;
    for (answer, total) in totals {
        match best {
            Some((_, best_total)) if total <= best_total => {}
            _ => best = Some((answer, total)),
        }
    }
    best.expect("at least one report").0.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup(balances: &[u64]) -> (Ledger, ConsensusEngine, Vec<Address>) {
        let mut ledger = Ledger::new();
        let mut engine = ConsensusEngine::new(&mut ledger).unwrap();
        engine.set_challenge_window(5);
        let accounts = balances
            .iter()
            .map(|b| ledger.create_account(TokenAmount(*b)).unwrap())
            .collect();
        (ledger, engine, accounts)
    }

    fn bool_inquiry(
        ledger: &mut Ledger,
        engine: &mut ConsensusEngine,
        quorum: u32,
        deposit: u64,
    ) -> InquiryId {
        engine
            .open_inquiry(
                ledger,
                "did it rain in Austin on 2015-07-03?",
                AnswerDomain::Boolean,
                quorum,
                TokenAmount(deposit),
            )
            .unwrap()
    }

    #[test]
    fn zero_quorum_rejected() {
        let (mut ledger, mut engine, _) = setup(&[]);
        let err = engine
            .open_inquiry(&mut ledger, "q", AnswerDomain::Boolean, 0, TokenAmount(1))
            .unwrap_err();
        assert_eq!(err, ConsensusError::ZeroQuorum);
    }

    #[test]
    fn quorum_reaching_report_resolves() {
        let (mut ledger, mut engine, accounts) = setup(&[100; 5]);
        let id = bool_inquiry(&mut ledger, &mut engine, 5, 10);
        for (i, account) in accounts.iter().enumerate() {
            assert_eq!(engine.inquiry(id).unwrap().status, InquiryStatus::Open);
            engine
                .submit_report(&mut ledger, id, *account, AnswerValue::Bool(i != 4))
                .unwrap();
        }
        assert_eq!(engine.inquiry(id).unwrap().status, InquiryStatus::Resolved);
        assert_eq!(
            engine.inquiry(id).unwrap().resolved_answer,
            Some(AnswerValue::Bool(true))
        );
    }

    #[test]
    fn four_of_five_redistribution_hand_computed() {
        let (mut ledger, mut engine, accounts) = setup(&[100; 5]);
        let id = bool_inquiry(&mut ledger, &mut engine, 5, 10);
        for (i, account) in accounts.iter().enumerate() {
            engine
                .submit_report(&mut ledger, id, *account, AnswerValue::Bool(i != 4))
                .unwrap();
        }
        // Dissenter forfeits 10, split 4 ways: 2 each, remainder 2 to sink.
        for account in &accounts[..4] {
            assert_eq!(ledger.balance(*account).unwrap(), TokenAmount(102));
        }
        assert_eq!(ledger.balance(accounts[4]).unwrap(), TokenAmount(90));
        assert_eq!(ledger.balance(engine.sink()).unwrap(), TokenAmount(2));
        assert_eq!(ledger.balance(engine.address()).unwrap(), TokenAmount(0));
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn unanimous_round_refunds_exactly() {
        let (mut ledger, mut engine, accounts) = setup(&[100; 3]);
        let id = bool_inquiry(&mut ledger, &mut engine, 3, 25);
        for account in &accounts {
            engine
                .submit_report(&mut ledger, id, *account, AnswerValue::Bool(true))
                .unwrap();
        }
        for account in &accounts {
            assert_eq!(ledger.balance(*account).unwrap(), TokenAmount(100));
        }
        assert_eq!(ledger.balance(engine.sink()).unwrap(), TokenAmount(0));
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn duplicate_and_post_resolution_reports_rejected() {
        let (mut ledger, mut engine, accounts) = setup(&[100; 3]);
        let id = bool_inquiry(&mut ledger, &mut engine, 2, 10);
        engine
            .submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(true))
            .unwrap();
        assert_eq!(
            engine
                .submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(false))
                .unwrap_err(),
            ConsensusError::DuplicateReporter(accounts[0])
        );
        engine
            .submit_report(&mut ledger, id, accounts[1], AnswerValue::Bool(true))
            .unwrap();
        assert_eq!(
            engine
                .submit_report(&mut ledger, id, accounts[2], AnswerValue::Bool(true))
                .unwrap_err(),
            ConsensusError::QuorumMet
        );
    }

    #[test]
    fn insufficient_stake_rejected() {
        let (mut ledger, mut engine, accounts) = setup(&[9]);
        let id = bool_inquiry(&mut ledger, &mut engine, 1, 10);
        assert_eq!(
            engine
                .submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(true))
                .unwrap_err(),
            ConsensusError::InsufficientStake { stake: 9, required: 10 }
        );
    }

    #[test]
    fn wrong_domain_rejected() {
        let (mut ledger, mut engine, accounts) = setup(&[100]);
        let id = engine
            .open_inquiry(&mut ledger, "pick 0..3", AnswerDomain::Categorical { k: 3 }, 1, TokenAmount(1))
            .unwrap();
        assert_eq!(
            engine
                .submit_report(&mut ledger, id, accounts[0], AnswerValue::Numeric(3))
                .unwrap_err(),
            ConsensusError::BadDomain
        );
        assert_eq!(
            engine
                .submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(true))
                .unwrap_err(),
            ConsensusError::BadDomain
        );
    }

    #[test]
    fn heavy_stake_outvotes_head_count() {
        // One reporter with balance 10 disagrees with three holding 1 each.
        let (mut ledger, mut engine, accounts) = setup(&[10, 1, 1, 1]);
        let id = bool_inquiry(&mut ledger, &mut engine, 4, 1);
        engine
            .submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(true))
            .unwrap();
        for account in &accounts[1..] {
            engine
                .submit_report(&mut ledger, id, *account, AnswerValue::Bool(false))
                .unwrap();
        }
        assert_eq!(
            engine.inquiry(id).unwrap().resolved_answer,
            Some(AnswerValue::Bool(true))
        );
    }

    #[test]
    fn head_count_mode_is_sybil_able() {
        // Same balances, same votes, head-count weighting: the three light
        // identities now win. This is the attack stake weighting prevents.
        let (mut ledger, mut engine, accounts) = setup(&[10, 1, 1, 1]);
        engine.set_weight_mode(WeightMode::HeadCount);
        let id = bool_inquiry(&mut ledger, &mut engine, 4, 1);
        engine
            .submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(true))
            .unwrap();
        for account in &accounts[1..] {
            engine
                .submit_report(&mut ledger, id, *account, AnswerValue::Bool(false))
                .unwrap();
        }
        assert_eq!(
            engine.inquiry(id).unwrap().resolved_answer,
            Some(AnswerValue::Bool(false))
        );
    }

    #[test]
    fn splitting_stake_changes_nothing() {
        // Baseline: 10 vs {1, 1, 1}.
        let (mut ledger, mut engine, accounts) = setup(&[10, 1, 1, 1]);
        let id = bool_inquiry(&mut ledger, &mut engine, 4, 1);
        engine.submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(true)).unwrap();
        for account in &accounts[1..] {
            engine.submit_report(&mut ledger, id, *account, AnswerValue::Bool(false)).unwrap();
        }
        let baseline = engine.inquiry(id).unwrap().resolved_answer.clone();

        // The heavy reporter splits into five identities of 2 each.
        let balances = [2, 2, 2, 2, 2, 1, 1, 1];
        let (mut ledger, mut engine, accounts) = setup(&balances);
        let id = bool_inquiry(&mut ledger, &mut engine, 8, 1);
        for account in &accounts[..5] {
            engine.submit_report(&mut ledger, id, *account, AnswerValue::Bool(true)).unwrap();
        }
        for account in &accounts[5..] {
            engine.submit_report(&mut ledger, id, *account, AnswerValue::Bool(false)).unwrap();
        }
        assert_eq!(engine.inquiry(id).unwrap().resolved_answer, baseline);
    }

    #[test]
    fn numeric_inquiry_uses_weighted_median() {
        let (mut ledger, mut engine, accounts) = setup(&[1, 1, 5]);
        let id = engine
            .open_inquiry(&mut ledger, "how many?", AnswerDomain::Numeric, 3, TokenAmount(1))
            .unwrap();
        engine.submit_report(&mut ledger, id, accounts[0], AnswerValue::Numeric(10)).unwrap();
        engine.submit_report(&mut ledger, id, accounts[1], AnswerValue::Numeric(20)).unwrap();
        engine.submit_report(&mut ledger, id, accounts[2], AnswerValue::Numeric(30)).unwrap();
        // Weights 1, 1, 5: the heavy value is the weighted median.
        assert_eq!(
            engine.inquiry(id).unwrap().resolved_answer,
            Some(AnswerValue::Numeric(30))
        );
        ledger.check_conservation().unwrap();
    }

    fn resolved_bool_round(
        support_balances: &[u64],
    ) -> (Ledger, ConsensusEngine, Vec<Address>, InquiryId) {
        let (mut ledger, mut engine, accounts) = setup(support_balances);
        let id = bool_inquiry(&mut ledger, &mut engine, 1, 10);
        engine
            .submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(true))
            .unwrap();
        (ledger, engine, accounts, id)
    }

    #[test]
    fn challenge_requires_resolved_different_funded() {
        let (mut ledger, mut engine, accounts) = setup(&[1000, 99]);
        let id = bool_inquiry(&mut ledger, &mut engine, 2, 10);
        // Still open.
        assert!(matches!(
            engine.open_challenge(&mut ledger, id, accounts[0], AnswerValue::Bool(false)),
            Err(ConsensusError::NotChallengeable { .. })
        ));
        engine.submit_report(&mut ledger, id, accounts[0], AnswerValue::Bool(true)).unwrap();
        engine.submit_report(&mut ledger, id, accounts[1], AnswerValue::Bool(true)).unwrap();
        // Same answer as resolved.
        assert_eq!(
            engine
                .open_challenge(&mut ledger, id, accounts[0], AnswerValue::Bool(true))
                .unwrap_err(),
            ConsensusError::SameAnswer
        );
        // 99 < 100 deposit.
        assert!(matches!(
            engine.open_challenge(&mut ledger, id, accounts[1], AnswerValue::Bool(false)),
            Err(ConsensusError::InsufficientFunds { balance: 99, .. })
        ));
    }

    #[test]
    fn outstaked_challenge_preserves_answer_and_pays_supporters() {
        let (mut ledger, mut engine, accounts, id) = resolved_bool_round(&[1000, 1000, 600, 600]);
        let challenger = accounts[1];
        let challenge = engine
            .open_challenge(&mut ledger, id, challenger, AnswerValue::Bool(false))
            .unwrap();
        // Support 300 (200 + 100) vs dispute 100 (the challenge deposit).
        engine
            .stake_side(&mut ledger, challenge, accounts[2], StakeSide::SupportOriginal, TokenAmount(200))
            .unwrap();
        engine
            .stake_side(&mut ledger, challenge, accounts[3], StakeSide::SupportOriginal, TokenAmount(100))
            .unwrap();
        for _ in 0..5 {
            ledger.advance_block();
        }
        let answer = engine.resolve_challenge(&mut ledger, challenge).unwrap();
        assert_eq!(answer, AnswerValue::Bool(true));
        assert_eq!(engine.inquiry(id).unwrap().status, InquiryStatus::Final);
        // Dispute pool 100 split pro-rata: 200/300 -> 66, 100/300 -> 33, 1 to sink.
        assert_eq!(ledger.balance(accounts[2]).unwrap(), TokenAmount(666));
        assert_eq!(ledger.balance(accounts[3]).unwrap(), TokenAmount(633));
        assert_eq!(ledger.balance(challenger).unwrap(), TokenAmount(900));
        assert_eq!(ledger.balance(engine.sink()).unwrap(), TokenAmount(1));
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn richer_dispute_pool_flips_answer() {
        let (mut ledger, mut engine, accounts, id) = resolved_bool_round(&[1000, 1000, 600]);
        let challenge = engine
            .open_challenge(&mut ledger, id, accounts[1], AnswerValue::Bool(false))
            .unwrap();
        engine
            .stake_side(&mut ledger, challenge, accounts[1], StakeSide::SupportChallenge, TokenAmount(400))
            .unwrap();
        engine
            .stake_side(&mut ledger, challenge, accounts[2], StakeSide::SupportOriginal, TokenAmount(100))
            .unwrap();
        for _ in 0..5 {
            ledger.advance_block();
        }
        let answer = engine.resolve_challenge(&mut ledger, challenge).unwrap();
        assert_eq!(answer, AnswerValue::Bool(false));
        assert_eq!(
            engine.inquiry(id).unwrap().final_answer,
            Some(AnswerValue::Bool(false))
        );
        // Challenger staked 500 total and wins the whole support pool of 100.
        assert_eq!(ledger.balance(accounts[1]).unwrap(), TokenAmount(1100));
        assert_eq!(ledger.balance(accounts[2]).unwrap(), TokenAmount(500));
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn tie_preserves_and_refunds_both_pools() {
        let (mut ledger, mut engine, accounts, id) = resolved_bool_round(&[1000, 1000, 600]);
        let challenge = engine
            .open_challenge(&mut ledger, id, accounts[1], AnswerValue::Bool(false))
            .unwrap();
        engine
            .stake_side(&mut ledger, challenge, accounts[2], StakeSide::SupportOriginal, TokenAmount(100))
            .unwrap();
        for _ in 0..5 {
            ledger.advance_block();
        }
        let answer = engine.resolve_challenge(&mut ledger, challenge).unwrap();
        assert_eq!(answer, AnswerValue::Bool(true));
        assert_eq!(ledger.balance(accounts[1]).unwrap(), TokenAmount(1000));
        assert_eq!(ledger.balance(accounts[2]).unwrap(), TokenAmount(600));
        assert_eq!(ledger.balance(engine.sink()).unwrap(), TokenAmount(0));
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn stake_after_deadline_and_early_or_double_resolution_rejected() {
        let (mut ledger, mut engine, accounts, id) = resolved_bool_round(&[1000, 1000, 600]);
        let challenge = engine
            .open_challenge(&mut ledger, id, accounts[1], AnswerValue::Bool(false))
            .unwrap();
        assert!(matches!(
            engine.resolve_challenge(&mut ledger, challenge),
            Err(ConsensusError::BeforeDeadline { .. })
        ));
        for _ in 0..5 {
            ledger.advance_block();
        }
        assert!(matches!(
            engine.stake_side(
                &mut ledger,
                challenge,
                accounts[2],
                StakeSide::SupportOriginal,
                TokenAmount(1)
            ),
            Err(ConsensusError::DeadlinePassed { .. })
        ));
        engine.resolve_challenge(&mut ledger, challenge).unwrap();
        assert_eq!(
            engine.resolve_challenge(&mut ledger, challenge).unwrap_err(),
            ConsensusError::DoubleResolution
        );
        // Finalized inquiries accept no second challenge.
        assert!(matches!(
            engine.open_challenge(&mut ledger, id, accounts[2], AnswerValue::Bool(false)),
            Err(ConsensusError::NotChallengeable { .. })
        ));
    }

    #[test]
    fn second_challenge_while_one_runs_rejected() {
        let (mut ledger, mut engine, accounts, id) = resolved_bool_round(&[1000, 1000, 600]);
        engine
            .open_challenge(&mut ledger, id, accounts[1], AnswerValue::Bool(false))
            .unwrap();
        assert!(matches!(
            engine.open_challenge(&mut ledger, id, accounts[2], AnswerValue::Bool(false)),
            Err(ConsensusError::NotChallengeable { .. })
        ));
    }

    proptest! {
        /// Conservation holds and scaling every balance by a common factor
        /// never changes the resolved answer.
        #[test]
        fn conservation_and_argmax_invariance(
            stakes in proptest::collection::vec(1u64..500, 2..8),
            votes in proptest::collection::vec(proptest::bool::ANY, 2..8),
            factor in 2u64..5,
        ) {
            let n = stakes.len().min(votes.len());
            let run = |scale: u64| {
                let balances: Vec<u64> = stakes[..n].iter().map(|s| s * scale).collect();
                let (mut ledger, mut engine, accounts) = setup(&balances);
                let id = bool_inquiry(&mut ledger, &mut engine, n as u32, 1);
                for (account, vote) in accounts.iter().zip(&votes[..n]) {
                    engine
                        .submit_report(&mut ledger, id, *account, AnswerValue::Bool(*vote))
                        .unwrap();
                }
                ledger.check_conservation().unwrap();
                engine.inquiry(id).unwrap().resolved_answer.clone()
            };
            prop_assert_eq!(run(1), run(factor));
        }
    }
}

//! Metrics derived from the event log and nothing else. The same builder
//! serves live runs and replays, which is what makes `replay` a real
//! check: if a metric needed state outside the log, replay would diverge.
//!
//! Output is line-delimited JSON in a fixed order: one `scenario` record,
//! then one record per SLA, per participating oracle, and per inquiry.
//! `tokens_net` counts reward shares earned minus penalties forfeited;
//! flat transaction fees are intentionally out of scope since fee charges
//! are not evented.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::answer::AnswerValue;
use crate::consensus::{
    ChallengeFinalizedPayload, InquiryId, InquiryOpenedPayload, InquiryResolvedPayload,
};
use crate::ledger::{Address, LedgerEvent};
use crate::market::{
    BidSubmittedPayload, SlaFinalizedPayload, SlaId, SlaProposedPayload, SlaSettledPayload,
    SlaVoidedPayload, ValidityRecordedPayload,
};
use crate::reporting::AggregatedPayload;

use super::ScenarioError;

/// First event of every scenario run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioStartPayload {
    pub seed: u64,
    pub blocks: u64,
}

/// Scripted ground truth for an SLA, recorded for scoring only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlaTruthPayload {
    pub sla: SlaId,
    pub truth: AnswerValue,
}

/// Scripted ground truth for an inquiry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InquiryTruthPayload {
    pub inquiry: InquiryId,
    pub truth: AnswerValue,
}

#[derive(Default)]
struct SlaState {
    proposed_at: Option<u64>,
    selected: Vec<Address>,
    voided: bool,
    aggregated: bool,
    settled: bool,
    answer: Option<AnswerValue>,
    answer_height: Option<u64>,
    truth: Option<AnswerValue>,
}

#[derive(Default)]
struct OracleState {
    assigned: u64,
    valid: u64,
    penalized: u64,
    tokens_net: i128,
    trajectory: Vec<(u64, f64)>,
}

impl OracleState {
    fn score(&self) -> f64 {
        (self.valid as f64 + 1.0) / (self.assigned as f64 + 2.0)
    }
}

#[derive(Default)]
struct InquiryState {
    question: String,
    resolved: Option<AnswerValue>,
    final_answer: Option<AnswerValue>,
    truth: Option<AnswerValue>,
    challenge: Option<ChallengeState>,
}

struct ChallengeState {
    flipped: bool,
    support: u64,
    dispute: u64,
}

/// Folds ledger events into per-SLA, per-oracle, and per-inquiry metrics.
#[derive(Default)]
pub struct MetricsBuilder {
    scenario: Option<ScenarioStartPayload>,
    slas: BTreeMap<u64, SlaState>,
    oracles: BTreeMap<Address, OracleState>,
    inquiries: BTreeMap<u64, InquiryState>,
}

#[derive(Serialize)]
struct ScenarioRecord {
    record: &'static str,
    seed: u64,
    blocks: u64,
}

#[derive(Serialize)]
struct SlaRecordOut<'a> {
    record: &'static str,
    sla: u64,
    status: &'static str,
    answer: &'a Option<AnswerValue>,
    truth: &'a Option<AnswerValue>,
    correct: Option<bool>,
    blocks_to_answer: Option<u64>,
    oracles: usize,
}

#[derive(Serialize)]
struct OracleRecordOut<'a> {
    record: &'static str,
    oracle: String,
    assigned: u64,
    valid: u64,
    penalized: u64,
    score: f64,
    tokens_net: i128,
    trajectory: &'a [(u64, f64)],
}

#[derive(Serialize)]
struct ChallengeOut {
    flipped: bool,
    support: u64,
    dispute: u64,
}

#[derive(Serialize)]
struct InquiryRecordOut<'a> {
    record: &'static str,
    inquiry: u64,
    question: &'a str,
    answer: Option<&'a AnswerValue>,
    truth: &'a Option<AnswerValue>,
    correct: Option<bool>,
    challenge: Option<ChallengeOut>,
}

impl MetricsBuilder {
    pub fn new() -> Self {
        MetricsBuilder::default()
    }

    pub fn ingest(&mut self, event: &LedgerEvent) -> Result<(), ScenarioError> {
        fn parse<'a, T: Deserialize<'a>>(event: &'a LedgerEvent) -> Result<T, ScenarioError> {
            serde_json::from_slice(&event.payload).map_err(|e| ScenarioError::MalformedPayload {
                seq: event.seq,
                topic: event.topic.clone(),
                reason: e.to_string(),
            })
        }

        match event.topic.as_str() {
            "scenario_start" => {
                self.scenario = Some(parse::<ScenarioStartPayload>(event)?);
            }
            "sla_proposed" => {
                let p: SlaProposedPayload = parse(event)?;
                self.slas.entry(p.sla.0).or_default().proposed_at = Some(event.height.0);
            }
            "bid_submitted" => {
                let p: BidSubmittedPayload = parse(event)?;
                self.oracles.entry(p.oracle).or_default();
            }
            "sla_finalized" => {
                let p: SlaFinalizedPayload = parse(event)?;
                for oracle in &p.selected {
                    let state = self.oracles.entry(*oracle).or_default();
                    state.assigned += 1;
                    let score = state.score();
                    state.trajectory.push((event.height.0, score));
                }
                self.slas.entry(p.sla.0).or_default().selected = p.selected;
            }
            "sla_voided" => {
                let p: SlaVoidedPayload = parse(event)?;
                self.slas.entry(p.sla.0).or_default().voided = true;
            }
            "aggregated" => {
                let p: AggregatedPayload = parse(event)?;
                let state = self.slas.entry(p.sla.0).or_default();
                state.aggregated = true;
                state.answer = p.answer;
                state.answer_height = Some(event.height.0);
            }
            "validity_recorded" => {
                let p: ValidityRecordedPayload = parse(event)?;
                let state = self.oracles.entry(p.oracle).or_default();
                if p.valid {
                    state.valid += 1;
                } else {
                    state.penalized += 1;
                }
                state.tokens_net -= i128::from(p.forfeited);
                let score = state.score();
                state.trajectory.push((event.height.0, score));
            }
            "sla_settled" => {
                let p: SlaSettledPayload = parse(event)?;
                let state = self.slas.entry(p.sla.0).or_default();
                state.settled = true;
                let selected = state.selected.clone();
                for oracle in selected {
                    self.oracles.entry(oracle).or_default().tokens_net += i128::from(p.share);
                }
            }
            "sla_truth" => {
                let p: SlaTruthPayload = parse(event)?;
                self.slas.entry(p.sla.0).or_default().truth = Some(p.truth);
            }
            "inquiry_opened" => {
                let p: InquiryOpenedPayload = parse(event)?;
                self.inquiries.entry(p.inquiry.0).or_default().question = p.question;
            }
            "inquiry_resolved" => {
                let p: InquiryResolvedPayload = parse(event)?;
                self.inquiries.entry(p.inquiry.0).or_default().resolved = Some(p.answer);
            }
            "inquiry_truth" => {
                let p: InquiryTruthPayload = parse(event)?;
                self.inquiries.entry(p.inquiry.0).or_default().truth = Some(p.truth);
            }
            "challenge_finalized" => {
                let p: ChallengeFinalizedPayload = parse(event)?;
                let state = self.inquiries.entry(p.inquiry.0).or_default();
                state.final_answer = Some(p.answer);
                state.challenge = Some(ChallengeState {
                    flipped: p.flipped,
                    support: p.support_total,
                    dispute: p.dispute_total,
                });
            }
            _ => {}
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<String> {
        fn emit<T: Serialize>(value: &T) -> String {
            serde_json::to_string(value).expect("metric records serialize")
        }
        let mut lines = Vec::new();
        if let Some(s) = &self.scenario {
            lines.push(emit(&ScenarioRecord {
                record: "scenario",
                seed: s.seed,
                blocks: s.blocks,
            }));
        }
        for (id, s) in &self.slas {
            let status = if s.voided {
                "voided"
            } else if s.settled {
                "settled"
            } else if s.aggregated {
                "aggregated"
            } else {
                "unresolved"
            };
            let correct = match (&s.answer, &s.truth) {
                (Some(answer), Some(truth)) => Some(answer == truth),
                _ => None,
            };
            let blocks_to_answer = match (&s.answer, s.answer_height, s.proposed_at) {
                (Some(_), Some(answered), Some(proposed)) => Some(answered - proposed),
                _ => None,
            };
            lines.push(emit(&SlaRecordOut {
                record: "sla",
                sla: *id,
                status,
                answer: &s.answer,
                truth: &s.truth,
                correct,
                blocks_to_answer,
                oracles: s.selected.len(),
            }));
        }
        for (address, o) in &self.oracles {
            lines.push(emit(&OracleRecordOut {
                record: "oracle",
                oracle: address.to_hex(),
                assigned: o.assigned,
                valid: o.valid,
                penalized: o.penalized,
                score: o.score(),
                tokens_net: o.tokens_net,
                trajectory: &o.trajectory,
            }));
        }
        for (id, i) in &self.inquiries {
            let standing = i.final_answer.as_ref().or(i.resolved.as_ref());
            let correct = match (standing, &i.truth) {
                (Some(answer), Some(truth)) => Some(answer == truth),
                _ => None,
            };
            lines.push(emit(&InquiryRecordOut {
                record: "inquiry",
                inquiry: *id,
                question: &i.question,
                answer: standing,
                truth: &i.truth,
                correct,
                challenge: i.challenge.as_ref().map(|c| ChallengeOut {
                    flipped: c.flipped,
                    support: c.support,
                    dispute: c.dispute,
                }),
            }));
        }
        lines
    }
}

pub fn metrics_from_events(events: &[LedgerEvent]) -> Result<Vec<String>, ScenarioError> {
    let mut builder = MetricsBuilder::new();
    for event in events {
        builder.ingest(event)?;
    }
    Ok(builder.finish())
}

/// Rebuilds metrics from an exported log. Malformed lines are reported
/// with their 1-based line number.
pub fn metrics_from_log(log: &str) -> Result<Vec<String>, ScenarioError> {
    let mut builder = MetricsBuilder::new();
    for (index, line) in log.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let event = LedgerEvent::parse_line(line).map_err(|e| ScenarioError::MalformedLog {
            line: index + 1,
            reason: e.to_string(),
        })?;
        builder.ingest(&event)?;
    }
    Ok(builder.finish())
}

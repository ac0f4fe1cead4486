//! The off-chain oracle node: watches the event log, bids on SLAs, builds
//! assignments from finalized SLAs, runs them as schema-checked subtask
//! pipelines, and drives commit-reveal reporting with node-local salts.
//!
//! A query naming several sources (the nested form) expands into parallel
//! sub-pipelines whose outputs the node aggregates locally with the SLA's
//! own aggregator before committing, so work is distributed across both
//! oracles and data sources. Node behavior is configurable: honest nodes
//! report their pipeline result, lazy ones commit but never reveal,
//! colluding ones push a fixed value, random ones draw from their seeded
//! generator.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::answer::{commitment_digest, AnswerValue, Salt};
use crate::ledger::{Address, BlockHeight, Ledger};
use crate::market::{
    AggregatorId, OracleMarket, SlaFinalizedPayload, SlaId, SlaProposal, SlaProposedPayload,
    SlaStatus,
};
use crate::query::{
    helper_json, helper_slice, helper_xml_path, parse_scaled, DataSourceType, Document,
    ParsingHelper, QueryEngine,
};
use crate::reporting::{aggregate_boolean, aggregate_numeric, NumericMethod, ReportingContract};

/// Shallow shape constraint on a subtask's document value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Any,
    Boolean,
    Number,
    String,
    Bytes,
    Array,
    Object,
}

impl Schema {
    pub fn admits(&self, doc: &Document) -> bool {
        match self {
            Schema::Any => true,
            Schema::Boolean => matches!(doc, Document::Bool(_)),
            Schema::Number => matches!(doc, Document::Num(_)),
            Schema::String => matches!(doc, Document::Str(_)),
            Schema::Bytes => matches!(doc, Document::Bytes(_)),
            Schema::Array => matches!(doc, Document::Array(_)),
            Schema::Object => matches!(doc, Document::Object(_)),
        }
    }

    /// Whether a value satisfying `self` always satisfies `other`.
    pub fn compatible_with(&self, other: &Schema) -> bool {
        *other == Schema::Any || *self == Schema::Any || self == other
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubtaskKind {
    HttpGet,
    HttpPost,
    ParseJson,
    ParseXml,
    Xpath,
    Slice,
    ToChainFormat,
    Adapter(String),
}

impl SubtaskKind {
    pub fn name(&self) -> String {
        match self {
            SubtaskKind::HttpGet => "http_get".into(),
            SubtaskKind::HttpPost => "http_post".into(),
            SubtaskKind::ParseJson => "parse_json".into(),
            SubtaskKind::ParseXml => "parse_xml".into(),
            SubtaskKind::Xpath => "xpath".into(),
            SubtaskKind::Slice => "slice".into(),
            SubtaskKind::ToChainFormat => "to_chain_format".into(),
            SubtaskKind::Adapter(name) => format!("adapter:{name}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Subtask {
    pub kind: SubtaskKind,
    pub params: BTreeMap<String, String>,
    pub input_schema: Schema,
    pub output_schema: Schema,
}

fn params(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

impl Subtask {
    pub fn http_get(url: &str) -> Subtask {
        Subtask {
            kind: SubtaskKind::HttpGet,
            params: params(&[("url", url)]),
            input_schema: Schema::Any,
            output_schema: Schema::String,
        }
    }

    /// Content-addressed fetch from the local content store.
    pub fn content_get(digest_hex: &str) -> Subtask {
        Subtask {
            kind: SubtaskKind::HttpGet,
            params: params(&[("content", digest_hex)]),
            input_schema: Schema::Any,
            output_schema: Schema::String,
        }
    }

    pub fn http_post(url: &str, body: &str) -> Subtask {
        Subtask {
            kind: SubtaskKind::HttpPost,
            params: params(&[("url", url), ("body", body)]),
            input_schema: Schema::Any,
            output_schema: Schema::String,
        }
    }

    pub fn parse_json(path: &str) -> Subtask {
        Subtask {
            kind: SubtaskKind::ParseJson,
            params: params(&[("path", path)]),
            input_schema: Schema::Any,
            output_schema: Schema::Any,
        }
    }

    pub fn parse_xml(path: &str) -> Subtask {
        Subtask {
            kind: SubtaskKind::ParseXml,
            params: params(&[("path", path)]),
            input_schema: Schema::String,
            output_schema: Schema::String,
        }
    }

    pub fn xpath(expr: &str) -> Subtask {
        Subtask {
            kind: SubtaskKind::Xpath,
            params: params(&[("expr", expr)]),
            input_schema: Schema::String,
            output_schema: Schema::String,
        }
    }

    pub fn slice(offset: u64, length: u64) -> Subtask {
        Subtask {
            kind: SubtaskKind::Slice,
            params: params(&[("offset", &offset.to_string()), ("length", &length.to_string())]),
            input_schema: Schema::Any,
            output_schema: Schema::Bytes,
        }
    }

    /// Converts the pipeline document to the on-chain answer encoding.
    /// `kind` is `boolean`, `numeric`, or `bytes`; numeric values become
    /// integers at `scale`.
    pub fn to_chain_format(kind: &str, scale: u32) -> Subtask {
        let output_schema = match kind {
            "boolean" => Schema::Boolean,
            "numeric" => Schema::Number,
            _ => Schema::Bytes,
        };
        Subtask {
            kind: SubtaskKind::ToChainFormat,
            params: params(&[("type", kind), ("scale", &scale.to_string())]),
            input_schema: Schema::Any,
            output_schema,
        }
    }

    pub fn adapter(descriptor: &AdapterDescriptor) -> Subtask {
        Subtask {
            kind: SubtaskKind::Adapter(descriptor.name.clone()),
            params: BTreeMap::new(),
            input_schema: descriptor.input_schema,
            output_schema: descriptor.output_schema,
        }
    }
}

/// In-process handler registration standing in for an external service.
#[derive(Clone, Debug)]
pub struct AdapterDescriptor {
    pub name: String,
    pub input_schema: Schema,
    pub output_schema: Schema,
}

pub type AdapterFn = fn(&Document) -> Result<Document, String>;

/// One sub-pipeline: an optional literal seed document (for identity-style
/// sources) followed by the subtask chain.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub seed_text: Option<String>,
    pub steps: Vec<Subtask>,
}

#[derive(Clone, Debug)]
pub struct Assignment {
    pub sla: SlaId,
    pub node: u64,
    pub pipelines: Vec<Pipeline>,
    pub aggregator: AggregatorId,
    pub scale: u32,
}

impl Assignment {
    pub fn id(&self) -> String {
        format!("sla{}-node{}", self.sla.0, self.node)
    }

    /// Checks the structural invariants: at least one pipeline, each with
    /// at least one subtask and a schema-compatible chain.
    pub fn validate(&self) -> Result<(), NodeError> {
        if self.pipelines.is_empty() {
            return Err(NodeError::Build("assignment has no pipelines".into()));
        }
        for (p, pipeline) in self.pipelines.iter().enumerate() {
            if pipeline.steps.is_empty() {
                return Err(NodeError::Build(format!("pipeline {p} has no subtasks")));
            }
            for pair in pipeline.steps.windows(2) {
                if !pair[0].output_schema.compatible_with(&pair[1].input_schema) {
                    return Err(NodeError::Build(format!(
                        "pipeline {p}: {} output {:?} incompatible with {} input {:?}",
                        pair[0].kind.name(),
                        pair[0].output_schema,
                        pair[1].kind.name(),
                        pair[1].input_schema
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-subtask execution record. Digest the input document, digest the
/// output, single-token status so lines stay machine-splittable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub assignment: String,
    pub step: usize,
    pub kind: String,
    pub input_digest: [u8; 32],
    pub output_digest: [u8; 32],
    pub status: String,
}

impl TraceStep {
    /// `assignment-id step kind input-digest output-digest status`.
    pub fn export_line(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.assignment,
            self.step,
            self.kind,
            hex::encode(self.input_digest),
            hex::encode(self.output_digest),
            self.status
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineFailure {
    pub pipeline: usize,
    pub step: usize,
    pub kind: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub outcome: Result<AnswerValue, PipelineFailure>,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NodeError {
    #[error("assignment build failed: {0}")]
    Build(String),
    #[error("adapter {0:?} already registered")]
    DuplicateAdapter(String),
    #[error("unknown assignment for SLA {0}")]
    UnknownAssignment(SlaId),
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeBehavior {
    Honest,
    /// Commits but never reveals.
    Lazy,
    /// Always reports the given value, pipeline or no pipeline.
    Colluding { value: AnswerValue },
    /// Reports a value drawn from the node's seeded generator.
    Random,
}

struct AssignmentState {
    assignment: Option<Assignment>,
    build_error: Option<String>,
    result: Option<PipelineResult>,
    committed: Option<(AnswerValue, Salt)>,
    revealed: bool,
}

pub struct OracleNode {
    index: u64,
    address: Address,
    behavior: NodeBehavior,
    rng: ChaCha12Rng,
    adapters: BTreeMap<String, (AdapterDescriptor, AdapterFn)>,
    proposals: BTreeMap<SlaId, SlaProposal>,
    states: BTreeMap<SlaId, AssignmentState>,
    bids_placed: BTreeSet<SlaId>,
    cursor: u64,
}

impl OracleNode {
    /// Node salts and random-behavior draws come from a generator seeded
    /// with `scenario_seed XOR index`, so runs replay exactly while nodes
    /// stay mutually distinct.
    pub fn new(index: u64, address: Address, behavior: NodeBehavior, scenario_seed: u64) -> Self {
        OracleNode {
            index,
            address,
            behavior,
            rng: ChaCha12Rng::seed_from_u64(scenario_seed ^ index),
            adapters: BTreeMap::new(),
            proposals: BTreeMap::new(),
            states: BTreeMap::new(),
            bids_placed: BTreeSet::new(),
            cursor: 0,
        }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn behavior(&self) -> &NodeBehavior {
        &self.behavior
    }

    pub fn register_adapter(
        &mut self,
        descriptor: AdapterDescriptor,
        handler: AdapterFn,
    ) -> Result<(), NodeError> {
        if self.adapters.contains_key(&descriptor.name) {
            return Err(NodeError::DuplicateAdapter(descriptor.name));
        }
        self.adapters.insert(descriptor.name.clone(), (descriptor, handler));
        Ok(())
    }

    /// Ingests market events since the given height: remembers proposals,
    /// and for every finalized SLA selecting this node builds (or recalls)
    /// its assignment. Returns the assignments for those events in order;
    /// calling twice over the same events returns the same list.
    pub fn watch_and_build(&mut self, ledger: &Ledger, from_height: BlockHeight) -> Vec<Assignment> {
        let mut built = Vec::new();
        let events: Vec<_> = ledger
            .events()
            .iter()
            .filter(|e| e.height >= from_height)
            .cloned()
            .collect();
        for event in events {
            match event.topic.as_str() {
                "sla_proposed" => {
                    if let Ok(p) = serde_json::from_slice::<SlaProposedPayload>(&event.payload) {
                        self.proposals.insert(p.sla, p.proposal);
                    }
                }
                "sla_finalized" => {
                    if let Ok(p) = serde_json::from_slice::<SlaFinalizedPayload>(&event.payload) {
                        if p.selected.contains(&self.address) {
                            self.ensure_assignment(p.sla);
                            if let Some(state) = self.states.get(&p.sla) {
                                if let Some(a) = &state.assignment {
                                    built.push(a.clone());
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        built
    }

    fn ensure_assignment(&mut self, sla: SlaId) {
        if self.states.contains_key(&sla) {
            return;
        }
        let state = match self.proposals.get(&sla) {
            None => AssignmentState {
                assignment: None,
                build_error: Some("proposal never observed".into()),
                result: None,
                committed: None,
                revealed: false,
            },
            Some(proposal) => match build_assignment(sla, self.index, proposal) {
                Ok(assignment) => AssignmentState {
                    assignment: Some(assignment),
                    build_error: None,
                    result: None,
                    committed: None,
                    revealed: false,
                },
                Err(err) => AssignmentState {
                    assignment: None,
                    build_error: Some(err.to_string()),
                    result: None,
                    committed: None,
                    revealed: false,
                },
            },
        };
        self.states.insert(sla, state);
    }

    /// Assignments that failed to build, with reasons. These SLAs get no
    /// commit from this node and so end up recorded invalid.
    pub fn failed_builds(&self) -> Vec<(SlaId, String)> {
        self.states
            .iter()
            .filter_map(|(sla, s)| s.build_error.clone().map(|e| (*sla, e)))
            .collect()
    }

    /// Runs every subtask of every pipeline in order, validating schemas at
    /// each boundary and recording a digest trace. Multiple pipelines are
    /// merged with the SLA's aggregator (boolean thresholds become a local
    /// majority over however many sub-pipelines succeeded).
    pub fn run_assignment(&self, engine: &QueryEngine, assignment: &Assignment) -> PipelineResult {
        let mut trace = Vec::new();
        let mut values: Vec<(usize, AnswerValue)> = Vec::new();
        let mut first_failure: Option<PipelineFailure> = None;
        let multi = assignment.pipelines.len() > 1;

        for (p, pipeline) in assignment.pipelines.iter().enumerate() {
            let trace_id = if multi {
                format!("{}-src{}", assignment.id(), p)
            } else {
                assignment.id()
            };
            match self.run_pipeline(engine, assignment, pipeline, &trace_id, &mut trace) {
                Ok(value) => values.push((p, value)),
                Err(failure) => {
                    if first_failure.is_none() {
                        first_failure = Some(PipelineFailure { pipeline: p, ..failure });
                    }
                }
            }
        }

        let outcome = if values.is_empty() {
            Err(first_failure.expect("no values implies a failure"))
        } else if values.len() == 1 && assignment.pipelines.len() == 1 {
            Ok(values.pop().expect("one value").1)
        } else {
            match local_aggregate(&values, assignment.aggregator) {
                Some(v) => Ok(v),
                None => Err(PipelineFailure {
                    pipeline: 0,
                    step: 0,
                    kind: "local_aggregate".into(),
                    reason: "sub-pipeline outputs could not be aggregated".into(),
                }),
            }
        };
        PipelineResult { outcome, trace }
    }

    fn run_pipeline(
        &self,
        engine: &QueryEngine,
        assignment: &Assignment,
        pipeline: &Pipeline,
        trace_id: &str,
        trace: &mut Vec<TraceStep>,
    ) -> Result<AnswerValue, PipelineFailure> {
        let mut doc = match &pipeline.seed_text {
            Some(text) => Document::Str(text.clone()),
            None => Document::Null,
        };
        let mut chain_value: Option<AnswerValue> = None;

        for (step, subtask) in pipeline.steps.iter().enumerate() {
            let input_digest = doc.digest();
            let fail = |reason: String, trace: &mut Vec<TraceStep>| {
                trace.push(TraceStep {
                    assignment: trace_id.to_string(),
                    step,
                    kind: subtask.kind.name(),
                    input_digest,
                    output_digest: input_digest,
                    status: "failed".into(),
                });
                Err(PipelineFailure {
                    pipeline: 0,
                    step,
                    kind: subtask.kind.name(),
                    reason,
                })
            };

            if !subtask.input_schema.admits(&doc) {
                return fail(
                    format!(
                        "input schema {:?} rejected {} value",
                        subtask.input_schema,
                        doc.shape_name()
                    ),
                    trace,
                );
            }
            let executed = self.execute_subtask(engine, assignment, subtask, &doc);
            let output = match executed {
                Ok(out) => out,
                Err(reason) => return fail(reason, trace),
            };
            if !subtask.output_schema.admits(&output.0) {
                return fail(
                    format!(
                        "output schema {:?} rejected {} value",
                        subtask.output_schema,
                        output.0.shape_name()
                    ),
                    trace,
                );
            }
            doc = output.0;
            if let Some(v) = output.1 {
                chain_value = Some(v);
            }
            trace.push(TraceStep {
                assignment: trace_id.to_string(),
                step,
                kind: subtask.kind.name(),
                input_digest,
                output_digest: doc.digest(),
                status: "ok".into(),
            });
        }

        match chain_value {
            Some(v) => Ok(v),
            None => Err(PipelineFailure {
                pipeline: 0,
                step: pipeline.steps.len().saturating_sub(1),
                kind: "pipeline".into(),
                reason: "pipeline produced no chain-format value".into(),
            }),
        }
    }

    fn execute_subtask(
        &self,
        engine: &QueryEngine,
        assignment: &Assignment,
        subtask: &Subtask,
        doc: &Document,
    ) -> Result<(Document, Option<AnswerValue>), String> {
        let param = |key: &str| {
            subtask
                .params
                .get(key)
                .cloned()
                .ok_or_else(|| format!("missing param {key:?}"))
        };
        match &subtask.kind {
            SubtaskKind::HttpGet => {
                let text = if let Some(digest_hex) = subtask.params.get("content") {
                    let digest = hex::decode(digest_hex)
                        .ok()
                        .and_then(|b| <[u8; 32]>::try_from(b).ok())
                        .ok_or_else(|| format!("bad content digest {digest_hex:?}"))?;
                    engine.fixtures().get_by_digest(&digest).map_err(|e| e.to_string())?
                } else {
                    engine.fixtures().get(&param("url")?).map_err(|e| e.to_string())?
                };
                Ok((Document::Str(text.to_string()), None))
            }
            SubtaskKind::HttpPost => {
                let key = format!("{}#{}", param("url")?, param("body")?);
                let text = engine.fixtures().get(&key).map_err(|e| e.to_string())?;
                Ok((Document::Str(text.to_string()), None))
            }
            SubtaskKind::ParseJson => {
                helper_json(doc, &param("path")?).map(|d| (d, None)).map_err(|e| e.to_string())
            }
            SubtaskKind::ParseXml => helper_xml_path(doc, &param("path")?)
                .map(|d| (d, None))
                .map_err(|e| e.to_string()),
            SubtaskKind::Xpath => helper_xml_path(doc, &param("expr")?)
                .map(|d| (d, None))
                .map_err(|e| e.to_string()),
            SubtaskKind::Slice => {
                let offset: u64 =
                    param("offset")?.parse().map_err(|_| "bad offset param".to_string())?;
                let length: u64 =
                    param("length")?.parse().map_err(|_| "bad length param".to_string())?;
                helper_slice(doc, offset, length).map(|d| (d, None)).map_err(|e| e.to_string())
            }
            SubtaskKind::ToChainFormat => {
                let scale: u32 = subtask
                    .params
                    .get("scale")
                    .map(|s| s.parse().map_err(|_| "bad scale param".to_string()))
                    .transpose()?
                    .unwrap_or(assignment.scale);
                let value = match param("type")?.as_str() {
                    "boolean" => match doc {
                        Document::Bool(b) => AnswerValue::Bool(*b),
                        Document::Str(s) => match s.trim() {
                            "true" => AnswerValue::Bool(true),
                            "false" => AnswerValue::Bool(false),
                            other => return Err(format!("not a boolean: {other:?}")),
                        },
                        other => {
                            return Err(format!("cannot chain-format {} as boolean", other.shape_name()))
                        }
                    },
                    "numeric" => {
                        let literal = match doc {
                            Document::Num(l) => l.clone(),
                            Document::Str(s) => s.clone(),
                            other => {
                                return Err(format!(
                                    "cannot chain-format {} as numeric",
                                    other.shape_name()
                                ))
                            }
                        };
                        AnswerValue::Numeric(
                            parse_scaled(&literal, scale).map_err(|e| e.to_string())?,
                        )
                    }
                    "bytes" => AnswerValue::Bytes(doc.as_bytes().map_err(|e| e.to_string())?),
                    other => return Err(format!("unknown chain format {other:?}")),
                };
                let out_doc = match &value {
                    AnswerValue::Bool(b) => Document::Bool(*b),
                    AnswerValue::Numeric(n) => Document::Num(n.to_string()),
                    AnswerValue::Bytes(b) => Document::Bytes(b.clone()),
                };
                Ok((out_doc, Some(value)))
            }
            SubtaskKind::Adapter(name) => {
                let (descriptor, handler) = self
                    .adapters
                    .get(name)
                    .ok_or_else(|| format!("unknown adapter {name:?}"))?;
                if !descriptor.input_schema.admits(doc) {
                    return Err(format!(
                        "adapter {name:?} input schema {:?} rejected {} value",
                        descriptor.input_schema,
                        doc.shape_name()
                    ));
                }
                let out = handler(doc).map_err(|e| format!("adapter {name:?}: {e}"))?;
                if !descriptor.output_schema.admits(&out) {
                    return Err(format!(
                        "adapter {name:?} output schema {:?} rejected {} value",
                        descriptor.output_schema,
                        out.shape_name()
                    ));
                }
                Ok((out, None))
            }
        }
    }

    /// Bids on every observed SLA still open for bidding, once each.
    /// Rejections (low reputation, insufficient funds) are ignored; the
    /// market is the arbiter.
    pub fn maybe_bid(&mut self, ledger: &mut Ledger, market: &mut OracleMarket) {
        let candidates: Vec<SlaId> = self
            .proposals
            .keys()
            .filter(|sla| !self.bids_placed.contains(sla))
            .copied()
            .collect();
        for sla in candidates {
            let open = market
                .sla(sla)
                .map(|r| r.status == SlaStatus::Bidding && ledger.height() < r.bidding_deadline())
                .unwrap_or(false);
            if !open {
                continue;
            }
            self.bids_placed.insert(sla);
            let _ = market.submit_bid(ledger, self.address, sla);
        }
    }

    /// Ingests new events via an internal cursor and runs any freshly built
    /// assignments. The per-block driver entry point.
    pub fn observe_and_run(&mut self, ledger: &Ledger, engine: &QueryEngine) {
        let events: Vec<_> = ledger.events_from_seq(self.cursor).to_vec();
        if let Some(last) = events.last() {
            self.cursor = last.seq + 1;
        }
        let mut new_slas = Vec::new();
        for event in events {
            match event.topic.as_str() {
                "sla_proposed" => {
                    if let Ok(p) = serde_json::from_slice::<SlaProposedPayload>(&event.payload) {
                        self.proposals.insert(p.sla, p.proposal);
                    }
                }
                "sla_finalized" => {
                    if let Ok(p) = serde_json::from_slice::<SlaFinalizedPayload>(&event.payload) {
                        if p.selected.contains(&self.address) && !self.states.contains_key(&p.sla) {
                            self.ensure_assignment(p.sla);
                            new_slas.push(p.sla);
                        }
                    }
                }
                _ => {}
            }
        }
        for sla in new_slas {
            let assignment = match &self.states[&sla].assignment {
                Some(a) => a.clone(),
                None => continue,
            };
            let result = self.run_assignment(engine, &assignment);
            self.states.get_mut(&sla).expect("state exists").result = Some(result);
        }
    }

    fn commit_value(&mut self, sla: SlaId) -> Option<AnswerValue> {
        let aggregator = self.proposals.get(&sla)?.aggregator;
        let scale = self.proposals.get(&sla)?.numeric_scale;
        match &self.behavior {
            NodeBehavior::Honest | NodeBehavior::Lazy => self
                .states
                .get(&sla)
                .and_then(|s| s.result.as_ref())
                .and_then(|r| r.outcome.as_ref().ok())
                .cloned(),
            NodeBehavior::Colluding { value } => Some(value.clone()),
            NodeBehavior::Random => Some(match aggregator {
                AggregatorId::BooleanThreshold { .. } => AnswerValue::Bool(self.rng.gen_bool(0.5)),
                _ => {
                    let units = self.rng.gen_range(0..=1_000u64) as i128;
                    AnswerValue::Numeric(units * 10i128.pow(scale))
                }
            }),
        }
    }

    /// Drives reporting for one SLA according to the current phase: commit
    /// with a fresh salt from the node generator during the commit phase,
    /// reveal the persisted salt during the reveal phase. Lazy nodes never
    /// reveal. Safe to call every block.
    pub fn report(
        &mut self,
        ledger: &mut Ledger,
        market: &mut OracleMarket,
        reporting: &mut ReportingContract,
        sla: SlaId,
    ) {
        let Ok(record) = market.sla(sla) else { return };
        if record.status != SlaStatus::Active || !record.is_selected(self.address) {
            return;
        }
        let now = ledger.height();
        let (commit_start, commit_end) = record.commit_phase().expect("active SLA");
        let (reveal_start, reveal_end) = record.reveal_phase().expect("active SLA");
        if !self.states.contains_key(&sla) {
            return;
        }

        let committed = self.states[&sla].committed.is_some();
        if now >= commit_start && now < commit_end && !committed {
            if let Some(value) = self.commit_value(sla) {
                let salt = Salt(self.rng.gen());
                let digest = commitment_digest(sla, self.address, &value, &salt);
                if reporting.commit(ledger, market, sla, self.address, digest).is_ok() {
                    self.states.get_mut(&sla).expect("state").committed = Some((value, salt));
                }
            }
            return;
        }

        if now >= reveal_start && now < reveal_end && !matches!(self.behavior, NodeBehavior::Lazy)
        {
            let state = self.states.get_mut(&sla).expect("state");
            if state.revealed {
                return;
            }
            if let Some((value, salt)) = state.committed.clone() {
                state.revealed = true;
                let _ = reporting.reveal(ledger, market, sla, self.address, value, salt);
            }
        }
    }

    /// SLAs this node currently tracks assignments for.
    pub fn tracked_slas(&self) -> Vec<SlaId> {
        self.states.keys().copied().collect()
    }

    pub fn trace_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for state in self.states.values() {
            if let Some(result) = &state.result {
                for step in &result.trace {
                    lines.push(step.export_line());
                }
            }
        }
        lines
    }
}

/// Merges sub-pipeline outputs with the SLA's aggregator. Boolean
/// thresholds become a simple majority of the successful sub-pipelines;
/// an undecidable merge (e.g. an even boolean split) yields None.
fn local_aggregate(values: &[(usize, AnswerValue)], aggregator: AggregatorId) -> Option<AnswerValue> {
    match aggregator {
        AggregatorId::BooleanThreshold { .. } => {
            let votes: Vec<(usize, bool)> = values
                .iter()
                .filter_map(|(i, v)| match v {
                    AnswerValue::Bool(b) => Some((*i, *b)),
                    _ => None,
                })
                .collect();
            if votes.is_empty() {
                return None;
            }
            let n = votes.len() as u32;
            aggregate_boolean(&votes, n / 2 + 1, n).answer
        }
        AggregatorId::Mean | AggregatorId::ReputationWeightedMean => {
            numeric_local(values, NumericMethod::Mean)
        }
        AggregatorId::Median => numeric_local(values, NumericMethod::Median),
        AggregatorId::Trimmed => numeric_local(values, NumericMethod::Trimmed),
    }
}

fn numeric_local(values: &[(usize, AnswerValue)], method: NumericMethod) -> Option<AnswerValue> {
    let nums: Vec<(usize, i128)> = values
        .iter()
        .filter_map(|(i, v)| match v {
            AnswerValue::Numeric(n) => Some((*i, *n)),
            _ => None,
        })
        .collect();
    if nums.is_empty() {
        return None;
    }
    aggregate_numeric(&nums, method).answer
}

/// Answer shape implied by the aggregator.
fn chain_format_kind(aggregator: AggregatorId) -> &'static str {
    match aggregator {
        AggregatorId::BooleanThreshold { .. } => "boolean",
        _ => "numeric",
    }
}

/// Maps helper specs to their subtask equivalents.
fn helper_subtask(helper: &ParsingHelper) -> Subtask {
    match helper {
        ParsingHelper::Json { path } => Subtask::parse_json(path),
        ParsingHelper::Xml { path } => Subtask::parse_xml(path),
        ParsingHelper::Xpath { expr } => Subtask::xpath(expr),
        ParsingHelper::Slice { offset, length } => Subtask::slice(*offset, *length),
    }
}

/// Builds the node-side assignment for an SLA. A single-source query is one
/// pipeline of fetch + helpers + chain formatting; a nested query expands
/// each parameter into its own sub-pipeline over the same helper chain.
/// Sources that only the query engine itself can serve (random draws,
/// computations, decryption) are not node-executable and fail the build.
pub fn build_assignment(
    sla: SlaId,
    node: u64,
    proposal: &SlaProposal,
) -> Result<Assignment, NodeError> {
    let spec = &proposal.query;
    if spec.params.is_empty() {
        return Err(NodeError::Build("query params must be non-empty".into()));
    }
    let kind = chain_format_kind(proposal.aggregator);
    let tail: Vec<Subtask> = spec
        .helpers
        .iter()
        .map(helper_subtask)
        .chain(std::iter::once(Subtask::to_chain_format(kind, proposal.numeric_scale)))
        .collect();

    let pipeline_for = |seed_text: Option<String>, fetch: Option<Subtask>| Pipeline {
        seed_text,
        steps: fetch.into_iter().chain(tail.iter().cloned()).collect(),
    };

    let pipelines = match spec.source {
        DataSourceType::Identity => vec![pipeline_for(Some(spec.params[0].clone()), None)],
        DataSourceType::Url => {
            let fetch = if spec.params.len() > 1 {
                Subtask::http_post(&spec.params[0], &spec.params[1])
            } else {
                Subtask::http_get(&spec.params[0])
            };
            vec![pipeline_for(None, Some(fetch))]
        }
        DataSourceType::WolframAlphaStub => {
            vec![pipeline_for(None, Some(Subtask::http_get(&format!("wolfram:{}", spec.params[0]))))]
        }
        DataSourceType::ContentStore => {
            vec![pipeline_for(None, Some(Subtask::content_get(&spec.params[0])))]
        }
        DataSourceType::Nested => {
            let mut pipelines = Vec::new();
            for param in &spec.params {
                pipelines.push(nested_pipeline(param, &pipeline_for)?);
            }
            pipelines
        }
        DataSourceType::Random | DataSourceType::Computation | DataSourceType::Decrypt => {
            return Err(NodeError::Build(format!(
                "source {:?} is not node-executable",
                spec.source
            )));
        }
    };

    let assignment = Assignment {
        sla,
        node,
        pipelines,
        aggregator: proposal.aggregator,
        scale: proposal.numeric_scale,
    };
    assignment.validate()?;
    Ok(assignment)
}

fn nested_pipeline(
    param: &str,
    pipeline_for: &impl Fn(Option<String>, Option<Subtask>) -> Pipeline,
) -> Result<Pipeline, NodeError> {
    let call = param.find('(').and_then(|open| {
        param.ends_with(')').then(|| (&param[..open], &param[open + 1..param.len() - 1]))
    });
    Ok(match call {
        Some(("identity", arg)) => pipeline_for(Some(arg.to_string()), None),
        Some(("url", arg)) => pipeline_for(None, Some(Subtask::http_get(arg))),
        Some(("wolfram", arg)) => {
            pipeline_for(None, Some(Subtask::http_get(&format!("wolfram:{arg}"))))
        }
        Some(("content", arg)) => pipeline_for(None, Some(Subtask::content_get(arg))),
        Some(("decrypt", _)) => {
            return Err(NodeError::Build("decrypt params are not node-executable".into()))
        }
        _ => pipeline_for(Some(param.to_string()), None),
    })
}

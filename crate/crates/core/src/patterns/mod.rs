//! Reusable oracle delivery patterns: an owner-writable store for
//! immediate reads, salted Merkle commitments, a publish-subscribe feed
//! with subscriber-local polling, an append-only broadcast channel, and
//! the full seven-step request-response lifecycle orchestrated over the
//! market, the node runtime, and commit-reveal reporting.

pub mod merkle;

pub use merkle::{merkle_build, merkle_verify, ProofNode, SaltedMerkleTree};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::AnswerValue;
use crate::ledger::{Address, BlockHeight, Ledger, LedgerError, TokenAmount};
use crate::market::{MarketError, OracleMarket, SlaId, SlaProposal};
use crate::node::{build_assignment, OracleNode};
use crate::query::{DataSourceType, QueryEngine, QuerySpec};
use crate::reporting::{ReportingContract, ReportingError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PatternError {
    #[error("caller {caller} is not the owner {owner}")]
    NotOwner { owner: Address, caller: Address },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{leaves} leaves but {salts} salts")]
    LengthMismatch { leaves: usize, salts: usize },
    #[error("cannot build an empty tree")]
    EmptyTree,
    #[error("leaf index {index} out of range ({leaves} leaves)")]
    IndexOutOfRange { index: usize, leaves: usize },
    #[error("query rejected at parse: {0}")]
    BadQuery(String),
    #[error("purchaser balance {balance} cannot cover reward {required}")]
    PaymentCheck { balance: u64, required: u64 },
    #[error("data access check failed: {0}")]
    AccessCheck(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Reporting(#[from] ReportingError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug)]
struct StoredEntry {
    value: Vec<u8>,
    version: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredPayload {
    pub key: String,
    pub version: u64,
}

/// Data stored once in contract storage, looked up by anyone. Typically a
/// digest (a salted Merkle root, a certificate hash) rather than the data
/// itself. Only the owner writes; reads cost nothing and touch nothing.
pub struct ImmediateReadStore {
    address: Address,
    owner: Address,
    entries: BTreeMap<String, StoredEntry>,
}

impl ImmediateReadStore {
    pub fn new(ledger: &mut Ledger, owner: Address) -> Result<Self, LedgerError> {
        Ok(ImmediateReadStore {
            address: ledger.create_account(TokenAmount(0))?,
            owner,
            entries: BTreeMap::new(),
        })
    }

    pub fn owner(&self) -> Address {
        self.owner
    }

    /// Writes or updates a key. Returns the key's new version.
    pub fn ir_store(
        &mut self,
        ledger: &mut Ledger,
        caller: Address,
        key: &str,
        value: &[u8],
    ) -> Result<u64, PatternError> {
        if caller != self.owner {
            return Err(PatternError::NotOwner { owner: self.owner, caller });
        }
        ledger.charge_fee(caller)?;
        let entry = self.entries.entry(key.to_string()).or_insert(StoredEntry {
            value: Vec::new(),
            version: 0,
        });
        entry.value = value.to_vec();
        entry.version += 1;
        let version = entry.version;
        let payload = serde_json::to_vec(&StoredPayload { key: key.to_string(), version })
            .expect("payload serializes");
        ledger.emit_event(self.address, "ir_stored", payload);
        Ok(version)
    }

    /// Free read of the latest value; no transaction, no side effects.
    pub fn ir_retrieve(&self, key: &str) -> Result<&[u8], PatternError> {
        self.entries
            .get(key)
            .map(|e| e.value.as_slice())
            .ok_or_else(|| PatternError::UnknownKey(key.to_string()))
    }

    pub fn version(&self, key: &str) -> Option<u64> {
        self.entries.get(key).map(|e| e.version)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedPublishedPayload {
    pub version: u64,
}

/// Publish-subscribe: the owner overwrites a single latest value and bumps
/// a version; subscribers poll locally against the version they last saw,
/// so checking for news costs no transaction.
pub struct PubSubFeed {
    address: Address,
    owner: Address,
    latest: Option<Vec<u8>>,
    version: u64,
    flag: bool,
}

impl PubSubFeed {
    pub fn new(ledger: &mut Ledger, owner: Address) -> Result<Self, LedgerError> {
        Ok(PubSubFeed {
            address: ledger.create_account(TokenAmount(0))?,
            owner,
            latest: None,
            version: 0,
            flag: false,
        })
    }

    pub fn feed_publish(
        &mut self,
        ledger: &mut Ledger,
        caller: Address,
        value: &[u8],
    ) -> Result<u64, PatternError> {
        if caller != self.owner {
            return Err(PatternError::NotOwner { owner: self.owner, caller });
        }
        ledger.charge_fee(caller)?;
        self.latest = Some(value.to_vec());
        self.version += 1;
        self.flag = true;
        let payload = serde_json::to_vec(&FeedPublishedPayload { version: self.version })
            .expect("payload serializes");
        ledger.emit_event(self.address, "feed_published", payload);
        Ok(self.version)
    }

    /// Returns the latest value iff it is newer than `last_seen_version`.
    /// A local read: no transaction, nothing mutated.
    pub fn feed_poll(&self, last_seen_version: u64) -> Option<(&[u8], u64)> {
        if self.version > last_seen_version {
            self.latest.as_deref().map(|v| (v, self.version))
        } else {
            None
        }
    }

    /// Whether anything has ever been published.
    pub fn flag(&self) -> bool {
        self.flag
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Subscriber-held poll state: the new-data flag is cleared per subscriber
/// by remembering the last version this subscriber consumed.
#[derive(Clone, Debug, Default)]
pub struct Subscription {
    last_seen: u64,
}

impl Subscription {
    pub fn new() -> Self {
        Subscription::default()
    }

    pub fn last_seen(&self) -> u64 {
        self.last_seen
    }

    /// Polls the feed and advances past whatever it returns, so the same
    /// version is never seen twice.
    pub fn poll<'a>(&mut self, feed: &'a PubSubFeed) -> Option<(&'a [u8], u64)> {
        let hit = feed.feed_poll(self.last_seen);
        if let Some((_, version)) = hit {
            self.last_seen = version;
        }
        hit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadMode {
    FullHistory,
    Latest,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelPublishedPayload {
    pub index: u64,
}

/// Broadcast: the owner appends messages to a channel without knowing who
/// listens; subscribers take the full history (time series) or just the
/// latest (spot value).
pub struct BroadcastChannel {
    address: Address,
    owner: Address,
    messages: Vec<Vec<u8>>,
}

impl BroadcastChannel {
    pub fn new(ledger: &mut Ledger, owner: Address) -> Result<Self, LedgerError> {
        Ok(BroadcastChannel {
            address: ledger.create_account(TokenAmount(0))?,
            owner,
            messages: Vec::new(),
        })
    }

    pub fn channel_publish(
        &mut self,
        ledger: &mut Ledger,
        caller: Address,
        message: &[u8],
    ) -> Result<u64, PatternError> {
        if caller != self.owner {
            return Err(PatternError::NotOwner { owner: self.owner, caller });
        }
        ledger.charge_fee(caller)?;
        self.messages.push(message.to_vec());
        let index = self.messages.len() as u64 - 1;
        let payload = serde_json::to_vec(&ChannelPublishedPayload { index })
            .expect("payload serializes");
        ledger.emit_event(self.address, "channel_published", payload);
        Ok(index)
    }

    /// An empty channel read as `Latest` is an empty result, not an error.
    pub fn channel_read(&self, mode: ReadMode) -> Vec<&[u8]> {
        match mode {
            ReadMode::FullHistory => self.messages.iter().map(|m| m.as_slice()).collect(),
            ReadMode::Latest => self.messages.last().map(|m| m.as_slice()).into_iter().collect(),
        }
    }
}

/// What a completed request-response cycle handed back to the requester.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub sla: SlaId,
    pub answer: Option<AnswerValue>,
    pub height: BlockHeight,
}

/// Orchestrates the classic request-response lifecycle: receive, parse,
/// check payment and access, retrieve, sign, broadcast, deliver. Each step
/// emits one numbered event (`rr_step_1` … `rr_step_7`, payload the SLA
/// id); a failed payment or access check at step 3 aborts the run with an
/// `rr_step_3_failed` event instead.
pub struct RequestResponseOracle {
    address: Address,
}

impl RequestResponseOracle {
    pub fn new(ledger: &mut Ledger) -> Result<Self, LedgerError> {
        Ok(RequestResponseOracle { address: ledger.create_account(TokenAmount(0))? })
    }

    fn emit_step(&self, ledger: &mut Ledger, step: u8, sla: SlaId) {
        let payload = serde_json::to_vec(&sla).expect("payload serializes");
        ledger.emit_event(self.address, &format!("rr_step_{step}"), payload);
    }

    /// One full cycle. The purchaser names the serving oracles directly
    /// (manual matching); `nodes` are the runtimes behind those addresses.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        ledger: &mut Ledger,
        market: &mut OracleMarket,
        reporting: &mut ReportingContract,
        engine: &QueryEngine,
        nodes: &mut [OracleNode],
        purchaser: Address,
        proposal: SlaProposal,
        oracles: Vec<Address>,
    ) -> Result<Delivery, PatternError> {
        let sla = market.peek_next_sla();

        // Step 1: receive the query.
        self.emit_step(ledger, 1, sla);

        // Step 2: parse it. Anything a node could not turn into a pipeline
        // is rejected here.
        build_assignment(sla, 0, &proposal).map_err(|e| PatternError::BadQuery(e.to_string()))?;
        self.emit_step(ledger, 2, sla);

        // Step 3: payment and data access permissions.
        if let Err(failure) = self.check_funding_and_access(ledger, engine, purchaser, &proposal, &oracles)
        {
            let payload = serde_json::to_vec(&sla).expect("payload serializes");
            ledger.emit_event(self.address, "rr_step_3_failed", payload);
            return Err(failure);
        }
        self.emit_step(ledger, 3, sla);
        let created = market.propose_with_selection(ledger, purchaser, proposal, oracles)?;
        debug_assert_eq!(created, sla);

        // Step 4: the nodes retrieve the data.
        for node in nodes.iter_mut() {
            node.observe_and_run(ledger, engine);
        }
        self.emit_step(ledger, 4, sla);

        // Step 5: sign the responses — binding commitments go on-chain.
        for node in nodes.iter_mut() {
            node.report(ledger, market, reporting, sla);
        }
        self.emit_step(ledger, 5, sla);

        // Step 6: broadcast — reveals open the commitments and the
        // aggregate is delivered.
        let (_, commit_end) = market.sla(sla)?.commit_phase().expect("active");
        while ledger.height() < commit_end {
            ledger.advance_block();
        }
        for node in nodes.iter_mut() {
            node.report(ledger, market, reporting, sla);
        }
        let (_, reveal_end) = market.sla(sla)?.reveal_phase().expect("active");
        while ledger.height() < reveal_end {
            ledger.advance_block();
        }
        reporting.finalize_aggregation(ledger, market, sla)?;
        self.emit_step(ledger, 6, sla);

        // Step 7: hand the single response back to the requester.
        let record = market.sla(sla)?;
        let delivery = Delivery { sla, answer: record.answer.clone(), height: ledger.height() };
        self.emit_step(ledger, 7, sla);
        Ok(delivery)
    }

    /// Re-runs the request every `interval` blocks until `horizon` blocks
    /// have passed, for data that must stay fresh (end-of-day pricing).
    /// An interval shorter than a cycle's commit and reveal phases just
    /// runs the cycles back to back.
    #[allow(clippy::too_many_arguments)]
    pub fn run_scheduled(
        &self,
        ledger: &mut Ledger,
        market: &mut OracleMarket,
        reporting: &mut ReportingContract,
        engine: &QueryEngine,
        nodes: &mut [OracleNode],
        purchaser: Address,
        proposal: SlaProposal,
        oracles: Vec<Address>,
        interval: u64,
        horizon: u64,
    ) -> Result<Vec<Delivery>, PatternError> {
        let start = ledger.height().0;
        let mut deliveries = Vec::new();
        let mut cycle_start = start;
        while cycle_start < start + horizon {
            while ledger.height().0 < cycle_start {
                ledger.advance_block();
            }
            deliveries.push(self.run(
                ledger,
                market,
                reporting,
                engine,
                nodes,
                purchaser,
                proposal.clone(),
                oracles.clone(),
            )?);
            cycle_start += interval;
        }
        Ok(deliveries)
    }

    fn check_funding_and_access(
        &self,
        ledger: &Ledger,
        engine: &QueryEngine,
        purchaser: Address,
        proposal: &SlaProposal,
        oracles: &[Address],
    ) -> Result<(), PatternError> {
        let balance = ledger.balance(purchaser)?;
        if balance < proposal.reward {
            return Err(PatternError::PaymentCheck {
                balance: balance.0,
                required: proposal.reward.0,
            });
        }
        for oracle in oracles {
            let oracle_balance = ledger.balance(*oracle)?;
            if oracle_balance < proposal.penalty {
                return Err(PatternError::PaymentCheck {
                    balance: oracle_balance.0,
                    required: proposal.penalty.0,
                });
            }
        }
        check_access(engine, &proposal.query)
    }
}

/// Data access permission: every source the query will fetch must be
/// reachable in the fixture registry.
fn check_access(engine: &QueryEngine, spec: &QuerySpec) -> Result<(), PatternError> {
    let registry = engine.fixtures();
    let require = |key: &str| -> Result<(), PatternError> {
        if registry.contains(key) {
            Ok(())
        } else {
            Err(PatternError::AccessCheck(format!("no access to {key:?}")))
        }
    };
    match spec.source {
        DataSourceType::Url => {
            if spec.params.len() > 1 {
                require(&format!("{}#{}", spec.params[0], spec.params[1]))
            } else {
                require(&spec.params[0])
            }
        }
        DataSourceType::WolframAlphaStub => require(&format!("wolfram:{}", spec.params[0])),
        DataSourceType::ContentStore => {
            let digest = hex::decode(&spec.params[0])
                .ok()
                .and_then(|b| <[u8; 32]>::try_from(b).ok())
                .ok_or_else(|| {
                    PatternError::AccessCheck(format!("bad content digest {:?}", spec.params[0]))
                })?;
            registry
                .get_by_digest(&digest)
                .map(|_| ())
                .map_err(|_| PatternError::AccessCheck(format!("unknown content {:?}", spec.params[0])))
        }
        DataSourceType::Nested => {
            for param in &spec.params {
                if let Some(open) = param.find('(') {
                    if param.ends_with(')') {
                        let arg = &param[open + 1..param.len() - 1];
                        match &param[..open] {
                            "url" => require(arg)?,
                            "wolfram" => require(&format!("wolfram:{arg}"))?,
                            "content" => {
                                let digest = hex::decode(arg)
                                    .ok()
                                    .and_then(|b| <[u8; 32]>::try_from(b).ok())
                                    .ok_or_else(|| {
                                        PatternError::AccessCheck(format!(
                                            "bad content digest {arg:?}"
                                        ))
                                    })?;
                                registry.get_by_digest(&digest).map(|_| ()).map_err(|_| {
                                    PatternError::AccessCheck(format!("unknown content {arg:?}"))
                                })?;
                            }
                            _ => {}
                        }
                    }
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::AggregatorId;
    use crate::node::NodeBehavior;
    use crate::query::{FixtureRegistry, ParsingHelper};

    #[test]
    fn store_round_trip_update_and_owner_gate() {
        let mut ledger = Ledger::new();
        let owner = ledger.create_account(TokenAmount(10)).unwrap();
        let stranger = ledger.create_account(TokenAmount(10)).unwrap();
        let mut store = ImmediateReadStore::new(&mut ledger, owner).unwrap();

        assert!(matches!(
            store.ir_retrieve("cert"),
            Err(PatternError::UnknownKey(_))
        ));
        let v1 = store.ir_store(&mut ledger, owner, "cert", b"digest-1").unwrap();
        assert_eq!(v1, 1);
        assert_eq!(store.ir_retrieve("cert").unwrap(), b"digest-1");

        // It may be updated; retrieve returns the newest value.
        let v2 = store.ir_store(&mut ledger, owner, "cert", b"digest-2").unwrap();
        assert_eq!(v2, 2);
        assert_eq!(store.ir_retrieve("cert").unwrap(), b"digest-2");

        assert!(matches!(
            store.ir_store(&mut ledger, stranger, "cert", b"evil"),
            Err(PatternError::NotOwner { .. })
        ));
    }

    #[test]
    fn feed_version_gate_and_latest_wins() {
        let mut ledger = Ledger::new();
        let owner = ledger.create_account(TokenAmount(10)).unwrap();
        let stranger = ledger.create_account(TokenAmount(10)).unwrap();
        let mut feed = PubSubFeed::new(&mut ledger, owner).unwrap();

        assert_eq!(feed.feed_poll(0), None);
        assert!(!feed.flag());

        feed.feed_publish(&mut ledger, owner, b"rate=1.02").unwrap();
        assert_eq!(feed.feed_poll(0), Some((b"rate=1.02".as_slice(), 1)));
        assert_eq!(feed.feed_poll(1), None);

        feed.feed_publish(&mut ledger, owner, b"rate=1.03").unwrap();
        // A slow poller skips straight to the latest.
        assert_eq!(feed.feed_poll(0), Some((b"rate=1.03".as_slice(), 2)));

        assert!(matches!(
            feed.feed_publish(&mut ledger, stranger, b"x"),
            Err(PatternError::NotOwner { .. })
        ));
    }

    #[test]
    fn subscription_never_sees_a_version_twice() {
        let mut ledger = Ledger::new();
        let owner = ledger.create_account(TokenAmount(10)).unwrap();
        let mut feed = PubSubFeed::new(&mut ledger, owner).unwrap();
        let mut subscription = Subscription::new();

        assert_eq!(subscription.poll(&feed), None);
        feed.feed_publish(&mut ledger, owner, b"v1").unwrap();
        assert_eq!(subscription.poll(&feed), Some((b"v1".as_slice(), 1)));
        assert_eq!(subscription.poll(&feed), None);
        feed.feed_publish(&mut ledger, owner, b"v2").unwrap();
        feed.feed_publish(&mut ledger, owner, b"v3").unwrap();
        assert_eq!(subscription.poll(&feed), Some((b"v3".as_slice(), 3)));
        assert_eq!(subscription.poll(&feed), None);
    }

    #[test]
    fn channel_history_latest_and_empty() {
        let mut ledger = Ledger::new();
        let owner = ledger.create_account(TokenAmount(10)).unwrap();
        let mut channel = BroadcastChannel::new(&mut ledger, owner).unwrap();

        assert!(channel.channel_read(ReadMode::Latest).is_empty());
        assert!(channel.channel_read(ReadMode::FullHistory).is_empty());

        for message in [b"r1".as_slice(), b"r2", b"r3"] {
            channel.channel_publish(&mut ledger, owner, message).unwrap();
        }
        assert_eq!(
            channel.channel_read(ReadMode::FullHistory),
            vec![b"r1".as_slice(), b"r2", b"r3"]
        );
        assert_eq!(channel.channel_read(ReadMode::Latest), vec![b"r3".as_slice()]);
    }

    const PRICE_DOC: &str = r#"{"result":{"XETHZUSD":{"c":["3940.39","0.5"]}}}"#;

    fn rr_world(
        purchaser_balance: u64,
    ) -> (
        Ledger,
        OracleMarket,
        ReportingContract,
        QueryEngine,
        Vec<OracleNode>,
        Address,
        SlaProposal,
        Vec<Address>,
        RequestResponseOracle,
    ) {
        let mut ledger = Ledger::new();
        let market = OracleMarket::new(&mut ledger).unwrap();
        let reporting = ReportingContract::new(&mut ledger).unwrap();
        let rr = RequestResponseOracle::new(&mut ledger).unwrap();
        let engine = QueryEngine::new(
            11,
            FixtureRegistry::in_memory(&[("https://feed.example/eth", PRICE_DOC)]),
        );
        let purchaser = ledger.create_account(TokenAmount(purchaser_balance)).unwrap();
        let mut nodes = Vec::new();
        let mut oracles = Vec::new();
        for i in 0..3u64 {
            let address = ledger.create_account(TokenAmount(100)).unwrap();
            nodes.push(OracleNode::new(i, address, NodeBehavior::Honest, 42));
            oracles.push(address);
        }
        let proposal = SlaProposal {
            query: QuerySpec::new(DataSourceType::Url, &["https://feed.example/eth"])
                .with_helpers(vec![ParsingHelper::Json { path: "result.XETHZUSD.c.0".into() }]),
            oracles_needed: 3,
            bidding_window: 1,
            commit_window: None,
            reveal_window: None,
            penalty: TokenAmount(10),
            reward: TokenAmount(30),
            aggregator: AggregatorId::Median,
            reputation_contract: market.reputation_contract(),
            min_reputation: 0.0,
            numeric_scale: 2,
        };
        (ledger, market, reporting, engine, nodes, purchaser, proposal, oracles, rr)
    }

    fn rr_topics(ledger: &Ledger) -> Vec<String> {
        ledger
            .events()
            .iter()
            .filter(|e| e.topic.starts_with("rr_step_"))
            .map(|e| e.topic.clone())
            .collect()
    }

    #[test]
    fn single_shot_emits_seven_steps_in_order() {
        let (mut ledger, mut market, mut reporting, engine, mut nodes, purchaser, proposal, oracles, rr) =
            rr_world(1_000);
        let delivery = rr
            .run(&mut ledger, &mut market, &mut reporting, &engine, &mut nodes, purchaser, proposal, oracles)
            .unwrap();
        assert_eq!(delivery.answer, Some(AnswerValue::Numeric(394039)));
        assert_eq!(
            rr_topics(&ledger),
            vec![
                "rr_step_1", "rr_step_2", "rr_step_3", "rr_step_4", "rr_step_5", "rr_step_6",
                "rr_step_7"
            ]
        );
        // Payload names the SLA.
        let step_events: Vec<_> = ledger
            .events()
            .iter()
            .filter(|e| e.topic.starts_with("rr_step_"))
            .collect();
        for event in step_events {
            let sla: SlaId = serde_json::from_slice(&event.payload).unwrap();
            assert_eq!(sla, delivery.sla);
        }
        ledger.check_conservation().unwrap();
    }

    #[test]
    fn unfunded_purchaser_aborts_at_step_3() {
        let (mut ledger, mut market, mut reporting, engine, mut nodes, purchaser, proposal, oracles, rr) =
            rr_world(5);
        let err = rr
            .run(&mut ledger, &mut market, &mut reporting, &engine, &mut nodes, purchaser, proposal, oracles)
            .unwrap_err();
        assert!(matches!(err, PatternError::PaymentCheck { balance: 5, required: 30 }));
        assert_eq!(rr_topics(&ledger), vec!["rr_step_1", "rr_step_2", "rr_step_3_failed"]);
    }

    #[test]
    fn unreachable_source_aborts_at_step_3() {
        let (mut ledger, mut market, mut reporting, engine, mut nodes, purchaser, mut proposal, oracles, rr) =
            rr_world(1_000);
        proposal.query =
            QuerySpec::new(DataSourceType::Url, &["https://nowhere.example"]).with_helpers(vec![
                ParsingHelper::Json { path: "x".into() },
            ]);
        let err = rr
            .run(&mut ledger, &mut market, &mut reporting, &engine, &mut nodes, purchaser, proposal, oracles)
            .unwrap_err();
        assert!(matches!(err, PatternError::AccessCheck(_)));
        assert_eq!(rr_topics(&ledger), vec!["rr_step_1", "rr_step_2", "rr_step_3_failed"]);
    }

    #[test]
    fn unparseable_query_rejected_at_step_2() {
        let (mut ledger, mut market, mut reporting, engine, mut nodes, purchaser, mut proposal, oracles, rr) =
            rr_world(1_000);
        proposal.query = QuerySpec::new(DataSourceType::Random, &["8"]);
        let err = rr
            .run(&mut ledger, &mut market, &mut reporting, &engine, &mut nodes, purchaser, proposal, oracles)
            .unwrap_err();
        assert!(matches!(err, PatternError::BadQuery(_)));
        assert_eq!(rr_topics(&ledger), vec!["rr_step_1"]);
    }

    #[test]
    fn schedule_interval_10_over_30_blocks_runs_3_cycles() {
        let (mut ledger, mut market, mut reporting, engine, mut nodes, purchaser, proposal, oracles, rr) =
            rr_world(1_000);
        let deliveries = rr
            .run_scheduled(
                &mut ledger,
                &mut market,
                &mut reporting,
                &engine,
                &mut nodes,
                purchaser,
                proposal,
                oracles,
                10,
                30,
            )
            .unwrap();
        assert_eq!(deliveries.len(), 3);
        let distinct: std::collections::BTreeSet<SlaId> =
            deliveries.iter().map(|d| d.sla).collect();
        assert_eq!(distinct.len(), 3);
        for delivery in &deliveries {
            assert_eq!(delivery.answer, Some(AnswerValue::Numeric(394039)));
        }
        // Three of each step event.
        let topics = rr_topics(&ledger);
        for step in 1..=7 {
            let expected = format!("rr_step_{step}");
            assert_eq!(topics.iter().filter(|t| **t == expected).count(), 3);
        }
        ledger.check_conservation().unwrap();
    }
}

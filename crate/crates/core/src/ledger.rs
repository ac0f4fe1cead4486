//! Minimal deterministic single-chain state machine.
//!
//! Accounts, token balances, escrow, an append-only event log and a discrete
//! block height. There are no forks, no gas and no transaction signatures:
//! the simulation trusts caller identity, and all mutation happens through
//! `&mut Ledger`, which serializes writes by construction. Time is block
//! height only; contracts that need deadlines compare against
//! [`Ledger::height`].
//!
//! The core invariant is conservation: at every point,
//! `sum(balances) + sum(open escrows) == total minted supply`. All arithmetic
//! is checked so that a violation surfaces as an error instead of a silent
//! wrap.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// 32-byte opaque account identifier. Comparison is byte-wise.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Address(pub [u8; 32]);

impl Address {
    /// Derives the address for the `n`-th account of a simulation.
    ///
    /// Addresses are a digest of the creation index so they look opaque but
    /// stay identical across runs.
    pub fn from_index(index: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"oraclesim-account-v1");
        hasher.update(index.to_be_bytes());
        Address(hasher.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Address(arr))
    }

    /// First four bytes as hex, for logs and trace lines.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({}..)", self.short())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Indivisible token units. Arithmetic is checked; overflow is an error.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct TokenAmount(pub u64);

impl TokenAmount {
    pub const ZERO: TokenAmount = TokenAmount(0);

    pub fn units(&self) -> u64 {
        self.0
    }

    pub fn checked_add(self, other: TokenAmount) -> Result<TokenAmount, LedgerError> {
        self.0
            .checked_add(other.0)
            .map(TokenAmount)
            .ok_or(LedgerError::Overflow)
    }

    pub fn checked_sub(self, other: TokenAmount) -> Result<TokenAmount, LedgerError> {
        self.0
            .checked_sub(other.0)
            .map(TokenAmount)
            .ok_or(LedgerError::Overflow)
    }
}

impl fmt::Debug for TokenAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for TokenAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Count of advanced blocks. Strictly monotone, starts at 0.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct BlockHeight(pub u64);

impl BlockHeight {
    pub fn plus(self, blocks: u64) -> BlockHeight {
        BlockHeight(self.0 + blocks)
    }
}

impl fmt::Debug for BlockHeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for BlockHeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Handle to an open escrow.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct EscrowId(pub u64);

/// Append-only on-chain log entry. `(height, seq)` totally orders all events;
/// `seq` is globally monotone so the order is also just `seq`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub emitter: Address,
    pub topic: String,
    pub payload: Vec<u8>,
    pub height: BlockHeight,
    pub seq: u64,
}

impl LedgerEvent {
    /// Renders the export line format: `height seq emitter topic payload-hex`.
    pub fn export_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.height,
            self.seq,
            self.emitter.to_hex(),
            self.topic,
            hex::encode(&self.payload)
        )
    }

    /// Parses a line produced by [`LedgerEvent::export_line`].
    pub fn parse_line(line: &str) -> Result<LedgerEvent, LedgerError> {
        let mut parts = line.split(' ');
        let mut next = |what: &str| {
            parts
                .next()
                .ok_or_else(|| LedgerError::MalformedEventLine(what.to_string()))
        };
        let height: u64 = next("height")?
            .parse()
            .map_err(|_| LedgerError::MalformedEventLine("height".into()))?;
        let seq: u64 = next("seq")?
            .parse()
            .map_err(|_| LedgerError::MalformedEventLine("seq".into()))?;
        let emitter = Address::from_hex(next("emitter")?)
            .ok_or_else(|| LedgerError::MalformedEventLine("emitter".into()))?;
        let topic = next("topic")?.to_string();
        let payload = hex::decode(next("payload")?)
            .map_err(|_| LedgerError::MalformedEventLine("payload".into()))?;
        if parts.next().is_some() {
            return Err(LedgerError::MalformedEventLine("trailing fields".into()));
        }
        Ok(LedgerEvent {
            emitter,
            topic,
            payload,
            height: BlockHeight(height),
            seq,
        })
    }
}

/// Topic filter for [`Ledger::read_events`].
#[derive(Clone, Debug)]
pub enum TopicFilter {
    Any,
    Exact(String),
    /// Matches topics beginning with the prefix, e.g. `rr_step_`.
    Prefix(String),
}

impl TopicFilter {
    pub fn matches(&self, topic: &str) -> bool {
        match self {
            TopicFilter::Any => true,
            TopicFilter::Exact(t) => topic == t,
            TopicFilter::Prefix(p) => topic.starts_with(p),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown address {0}")]
    UnknownAddress(String),
    #[error("insufficient funds: have {have}, need {need}")]
    InsufficientFunds { have: TokenAmount, need: TokenAmount },
    #[error("arithmetic overflow")]
    Overflow,
    #[error("unknown escrow {0:?}")]
    UnknownEscrow(EscrowId),
    #[error("escrow {0:?} already released")]
    EscrowClosed(EscrowId),
    #[error("conservation violated: balances {balances} + escrows {escrows} != supply {supply}")]
    ConservationViolated {
        balances: TokenAmount,
        escrows: TokenAmount,
        supply: TokenAmount,
    },
    #[error("malformed event line: bad {0}")]
    MalformedEventLine(String),
}

#[derive(Clone, Debug)]
struct Escrow {
    owner: Address,
    #[allow(dead_code)]
    holder: Address,
    amount: TokenAmount,
    open: bool,
}

/// The single-chain state machine.
///
/// Writes only happen through `&mut self`, which is the whole concurrency
/// model: one writer at a time, reads between transactions.
#[derive(Debug, Default)]
pub struct Ledger {
    balances: BTreeMap<Address, TokenAmount>,
    escrows: BTreeMap<EscrowId, Escrow>,
    events: Vec<LedgerEvent>,
    height: BlockHeight,
    next_seq: u64,
    next_account: u64,
    next_escrow: u64,
    total_supply: TokenAmount,
    /// Optional flat fee charged by contract entry points via [`Ledger::charge_fee`].
    flat_fee: TokenAmount,
    fee_sink: Option<Address>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    /// Enables a flat per-transaction fee. Fees move to a dedicated sink
    /// account so conservation still holds to the unit.
    pub fn enable_flat_fee(&mut self, fee: TokenAmount) -> Address {
        let sink = self.create_account(TokenAmount::ZERO).expect("supply fits");
        self.flat_fee = fee;
        self.fee_sink = Some(sink);
        sink
    }

    pub fn flat_fee(&self) -> TokenAmount {
        self.flat_fee
    }

    /// Charges the flat fee to `payer` if fees are enabled. Contract entry
    /// points call this once per mutating transaction.
    pub fn charge_fee(&mut self, payer: Address) -> Result<(), LedgerError> {
        if self.flat_fee.0 == 0 {
            return Ok(());
        }
        let sink = self.fee_sink.expect("fee sink exists when fee enabled");
        self.transfer(payer, sink, self.flat_fee)
    }

    /// Creates a fresh account holding `initial_balance`. This is the only
    /// way tokens are minted.
    pub fn create_account(
        &mut self,
        initial_balance: TokenAmount,
    ) -> Result<Address, LedgerError> {
        let new_supply = self.total_supply.checked_add(initial_balance)?;
        let addr = Address::from_index(self.next_account);
        self.next_account += 1;
        self.total_supply = new_supply;
        self.balances.insert(addr, initial_balance);
        Ok(addr)
    }

    pub fn balance(&self, addr: Address) -> Result<TokenAmount, LedgerError> {
        self.balances
            .get(&addr)
            .copied()
            .ok_or_else(|| LedgerError::UnknownAddress(addr.short()))
    }

    pub fn total_supply(&self) -> TokenAmount {
        self.total_supply
    }

    pub fn transfer(
        &mut self,
        from: Address,
        to: Address,
        amount: TokenAmount,
    ) -> Result<(), LedgerError> {
        let from_balance = self.balance(from)?;
        let to_balance = self.balance(to)?;
        if from_balance < amount {
            return Err(LedgerError::InsufficientFunds {
                have: from_balance,
                need: amount,
            });
        }
        if from == to {
            return Ok(());
        }
        let new_from = from_balance.checked_sub(amount)?;
        let new_to = to_balance.checked_add(amount)?;
        self.balances.insert(from, new_from);
        self.balances.insert(to, new_to);
        Ok(())
    }

    /// Moves `amount` out of `owner`'s spendable balance into a new escrow
    /// nominally held by `holder`.
    pub fn escrow(
        &mut self,
        owner: Address,
        holder: Address,
        amount: TokenAmount,
    ) -> Result<EscrowId, LedgerError> {
        let balance = self.balance(owner)?;
        self.balance(holder)?;
        if balance < amount {
            return Err(LedgerError::InsufficientFunds {
                have: balance,
                need: amount,
            });
        }
        self.balances.insert(owner, balance.checked_sub(amount)?);
        let id = EscrowId(self.next_escrow);
        self.next_escrow += 1;
        self.escrows.insert(
            id,
            Escrow {
                owner,
                holder,
                amount,
                open: true,
            },
        );
        Ok(id)
    }

    /// Pays out the full escrowed amount to `to` and closes the escrow.
    /// A second release of the same escrow is an error.
    pub fn release(&mut self, escrow: EscrowId, to: Address) -> Result<(), LedgerError> {
        let to_balance = self.balance(to)?;
        let entry = self
            .escrows
            .get_mut(&escrow)
            .ok_or(LedgerError::UnknownEscrow(escrow))?;
        if !entry.open {
            return Err(LedgerError::EscrowClosed(escrow));
        }
        entry.open = false;
        let amount = entry.amount;
        self.balances.insert(to, to_balance.checked_add(amount)?);
        Ok(())
    }

    pub fn escrow_amount(&self, escrow: EscrowId) -> Result<TokenAmount, LedgerError> {
        self.escrows
            .get(&escrow)
            .filter(|e| e.open)
            .map(|e| e.amount)
            .ok_or(LedgerError::UnknownEscrow(escrow))
    }

    pub fn escrow_owner(&self, escrow: EscrowId) -> Result<Address, LedgerError> {
        self.escrows
            .get(&escrow)
            .map(|e| e.owner)
            .ok_or(LedgerError::UnknownEscrow(escrow))
    }

    pub fn emit_event(&mut self, emitter: Address, topic: &str, payload: Vec<u8>) {
        let event = LedgerEvent {
            emitter,
            topic: topic.to_string(),
            payload,
            height: self.height,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.events.push(event);
    }

    /// Returns all events matching the filter within `[from, to]` heights,
    /// in `(height, seq)` order. Reading never mutates state.
    pub fn read_events(
        &self,
        filter: &TopicFilter,
        from: BlockHeight,
        to: BlockHeight,
    ) -> Vec<LedgerEvent> {
        self.events
            .iter()
            .filter(|e| e.height >= from && e.height <= to && filter.matches(&e.topic))
            .cloned()
            .collect()
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Events with `seq >= from_seq`, used by pollers that track a cursor.
    pub fn events_from_seq(&self, from_seq: u64) -> &[LedgerEvent] {
        let start = self.events.partition_point(|e| e.seq < from_seq);
        &self.events[start..]
    }

    pub fn advance_block(&mut self) -> BlockHeight {
        self.height = BlockHeight(self.height.0 + 1);
        self.height
    }

    pub fn height(&self) -> BlockHeight {
        self.height
    }

    /// Verifies conservation: `sum(balances) + sum(open escrows) == supply`.
    pub fn check_conservation(&self) -> Result<(), LedgerError> {
        let mut balances = TokenAmount::ZERO;
        for amount in self.balances.values() {
            balances = balances.checked_add(*amount)?;
        }
        let mut escrows = TokenAmount::ZERO;
        for escrow in self.escrows.values().filter(|e| e.open) {
            escrows = escrows.checked_add(escrow.amount)?;
        }
        if balances.checked_add(escrows)? != self.total_supply {
            return Err(LedgerError::ConservationViolated {
                balances,
                escrows,
                supply: self.total_supply,
            });
        }
        Ok(())
    }

    /// Writes the event log in the line-delimited export format.
    pub fn export_events(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&event.export_line());
            out.push('\n');
        }
        out
    }
}

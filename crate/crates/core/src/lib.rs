//! Deterministic simulator for decentralized oracle networks: a minimal
//! ledger, an oracle market with penalty-backed SLAs, commit-reveal
//! reporting with pluggable aggregation, off-chain oracle nodes running
//! subtask pipelines, a hermetic query engine with authenticity proofs,
//! Schelling-point human consensus with a challenge game, the classic
//! oracle interaction patterns, and a seeded scenario driver.

pub mod answer;
pub mod consensus;
pub mod ledger;
pub mod market;
pub mod node;
pub mod numeric;
pub mod patterns;
pub mod query;
pub mod reporting;
pub mod scenario;

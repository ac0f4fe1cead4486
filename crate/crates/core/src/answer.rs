//! Answer values and the byte-exact commitment construction used by
//! commit-reveal reporting.
//!
//! An answer is one of three shapes: a boolean, a fixed-point numeric (an
//! `i128` count of units at the SLA's scale), or an opaque byte string.
//! `canon` encodes an answer into a canonical byte string; two answers
//! encode equal bytes iff they are the same answer, and the three shapes
//! can never collide because each carries a distinct type tag.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ledger::Address;
use crate::market::SlaId;

/// Domain separator prefixed to every commitment preimage.
pub const COMMIT_DOMAIN_TAG: &[u8; 16] = b"ORACLE-COMMIT-V1";

/// 32-byte blinding salt for a commitment.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Salt(pub [u8; 32]);

/// A value an oracle reports on-chain.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerValue {
    Bool(bool),
    /// Fixed-point units at the owning SLA's scale factor.
    Numeric(i128),
    Bytes(Vec<u8>),
}

impl AnswerValue {
    /// Canonical encoding: type tag byte (0x01 boolean, 0x02 numeric,
    /// 0x03 byte string), big-endian 8-byte payload length, payload.
    /// Numeric payload is the big-endian two's-complement 16-byte integer.
    pub fn canon(&self) -> Vec<u8> {
        let (tag, payload): (u8, Vec<u8>) = match self {
            AnswerValue::Bool(b) => (0x01, vec![u8::from(*b)]),
            AnswerValue::Numeric(n) => (0x02, n.to_be_bytes().to_vec()),
            AnswerValue::Bytes(bytes) => (0x03, bytes.clone()),
        };
        let mut out = Vec::with_capacity(9 + payload.len());
        out.push(tag);
        out.extend_from_slice(&(payload.len() as u64).to_be_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Human-readable form for logs and metrics.
    pub fn display(&self) -> String {
        match self {
            AnswerValue::Bool(b) => b.to_string(),
            AnswerValue::Numeric(n) => n.to_string(),
            AnswerValue::Bytes(bytes) => hex::encode(bytes),
        }
    }
}

/// Commitment digest binding (sla, oracle, value, salt):
/// `SHA-256(domain_tag || sla_id_be8 || oracle_bytes || canon(value) || salt)`.
pub fn commitment_digest(
    sla: SlaId,
    oracle: Address,
    value: &AnswerValue,
    salt: &Salt,
) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(COMMIT_DOMAIN_TAG);
    hasher.update(sla.0.to_be_bytes());
    hasher.update(oracle.0);
    hasher.update(value.canon());
    hasher.update(salt.0);
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sla(n: u64) -> SlaId {
        SlaId(n)
    }

    #[test]
    fn canon_booleans_exact_bytes() {
        assert_eq!(
            hex::encode(AnswerValue::Bool(true).canon()),
            "01000000000000000101"
        );
        assert_eq!(
            hex::encode(AnswerValue::Bool(false).canon()),
            "01000000000000000100"
        );
    }

    #[test]
    fn canon_numeric_exact_bytes() {
        assert_eq!(
            hex::encode(AnswerValue::Numeric(42).canon()),
            "0200000000000000100000000000000000000000000000002a"
        );
        assert_eq!(
            hex::encode(AnswerValue::Numeric(-1).canon()),
            "020000000000000010ffffffffffffffffffffffffffffffff"
        );
    }

    #[test]
    fn canon_bytes_length_prefixed() {
        assert_eq!(hex::encode(AnswerValue::Bytes(vec![]).canon()), "030000000000000000");
        assert_eq!(
            hex::encode(AnswerValue::Bytes(vec![0xab, 0xcd]).canon()),
            "030000000000000002abcd"
        );
    }

    #[test]
    fn canon_type_tags_never_collide() {
        // A boolean true and a numeric 1 differ at the tag byte.
        let b = AnswerValue::Bool(true).canon();
        let n = AnswerValue::Numeric(1).canon();
        assert_ne!(b, n);
        assert_eq!(b[0], 0x01);
        assert_eq!(n[0], 0x02);
    }

    #[test]
    fn commitment_is_deterministic_and_input_sensitive() {
        let oracle = Address::from_index(3);
        let salt = Salt([7u8; 32]);
        let value = AnswerValue::Numeric(100);

        let d1 = commitment_digest(sla(1), oracle, &value, &salt);
        let d2 = commitment_digest(sla(1), oracle, &value, &salt);
        assert_eq!(d1, d2);

        let mut other_salt = salt;
        other_salt.0[31] ^= 0x01;
        assert_ne!(d1, commitment_digest(sla(1), oracle, &value, &other_salt));

        assert_ne!(
            d1,
            commitment_digest(sla(1), oracle, &AnswerValue::Numeric(101), &salt)
        );
        assert_ne!(d1, commitment_digest(sla(2), oracle, &value, &salt));
        assert_ne!(
            d1,
            commitment_digest(sla(1), Address::from_index(4), &value, &salt)
        );
    }

    #[test]
    fn bool_true_and_numeric_one_commit_differently() {
        let oracle = Address::from_index(0);
        let salt = Salt([0u8; 32]);
        assert_ne!(
            commitment_digest(sla(0), oracle, &AnswerValue::Bool(true), &salt),
            commitment_digest(sla(0), oracle, &AnswerValue::Numeric(1), &salt)
        );
    }
}

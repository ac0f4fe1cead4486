//! Detached authenticity proofs: a signature binding a query to its result
//! at a given height, verifiable by anyone holding the engine's public key.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ledger::BlockHeight;

/// Signature over `query_digest || result_digest || height_be8`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthenticityProof {
    pub query_digest: [u8; 32],
    pub result_digest: [u8; 32],
    pub height: u64,
    /// Public key of the signing engine.
    pub signer: [u8; 32],
    #[serde(with = "sig_bytes")]
    pub signature: [u8; 64],
}

mod sig_bytes {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(sig: &[u8; 64], s: S) -> Result<S::Ok, S::Error> {
        hex::encode(sig).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 64], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("signature must be 64 bytes"))
    }
}

fn proof_message(query_digest: &[u8; 32], result_digest: &[u8; 32], height: u64) -> Vec<u8> {
    let mut msg = Vec::with_capacity(72);
    msg.extend_from_slice(query_digest);
    msg.extend_from_slice(result_digest);
    msg.extend_from_slice(&height.to_be_bytes());
    msg
}

pub fn sign_proof(
    key: &SigningKey,
    query_digest: [u8; 32],
    result_bytes: &[u8],
    height: BlockHeight,
) -> AuthenticityProof {
    let result_digest: [u8; 32] = Sha256::digest(result_bytes).into();
    let message = proof_message(&query_digest, &result_digest, height.0);
    AuthenticityProof {
        query_digest,
        result_digest,
        height: height.0,
        signer: key.verifying_key().to_bytes(),
        signature: key.sign(&message).to_bytes(),
    }
}

/// True iff the presented result bytes hash to the proof's result digest,
/// the proof names the given key, and the signature verifies. Never errors;
/// malformed inputs simply verify false.
pub fn verify_proof(result_bytes: &[u8], proof: &AuthenticityProof, public_key: &[u8; 32]) -> bool {
    if proof.signer != *public_key {
        return false;
    }
    let result_digest: [u8; 32] = Sha256::digest(result_bytes).into();
    if result_digest != proof.result_digest {
        return false;
    }
    let Ok(key) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    let message = proof_message(&proof.query_digest, &proof.result_digest, proof.height);
    let signature = Signature::from_bytes(&proof.signature);
    key.verify(&message, &signature).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_key(tag: u8) -> SigningKey {
        SigningKey::from_bytes(&[tag; 32])
    }

    #[test]
    fn round_trip_verifies() {
        let key = test_key(1);
        let proof = sign_proof(&key, [9u8; 32], b"result body", BlockHeight(7));
        assert!(verify_proof(b"result body", &proof, &key.verifying_key().to_bytes()));
    }

    #[test]
    fn tampered_result_fails() {
        let key = test_key(1);
        let proof = sign_proof(&key, [9u8; 32], b"result body", BlockHeight(7));
        assert!(!verify_proof(b"result bodY", &proof, &key.verifying_key().to_bytes()));
    }

    #[test]
    fn wrong_key_fails() {
        let key = test_key(1);
        let other = test_key(2);
        let proof = sign_proof(&key, [9u8; 32], b"result body", BlockHeight(7));
        assert!(!verify_proof(b"result body", &proof, &other.verifying_key().to_bytes()));
    }

    #[test]
    fn tampered_signature_or_height_fails() {
        let key = test_key(1);
        let pk = key.verifying_key().to_bytes();
        let mut proof = sign_proof(&key, [9u8; 32], b"x", BlockHeight(7));
        proof.signature[0] ^= 1;
        assert!(!verify_proof(b"x", &proof, &pk));

        let mut proof = sign_proof(&key, [9u8; 32], b"x", BlockHeight(7));
        proof.height += 1;
        assert!(!verify_proof(b"x", &proof, &pk));
    }

    #[test]
    fn proof_serializes_to_json_and_back() {
        let key = test_key(3);
        let proof = sign_proof(&key, [1u8; 32], b"payload", BlockHeight(0));
        let json = serde_json::to_string(&proof).unwrap();
        let back: AuthenticityProof = serde_json::from_str(&json).unwrap();
        assert_eq!(proof, back);
    }
}

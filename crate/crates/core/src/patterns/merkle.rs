//! Salted Merkle trees: publish only the root on-chain, prove any leaf
//! later. Per-leaf salts keep low-entropy data (an ID card field, a yes/no
//! flag) from being brute-forced out of the tree, and domain-separated
//! digests (leaf tag 0x00, interior tag 0x01) block leaf/interior
//! confusion attacks.

use sha2::{Digest, Sha256};

use super::PatternError;
use crate::answer::Salt;

const LEAF_TAG: u8 = 0x00;
const INTERIOR_TAG: u8 = 0x01;

pub fn leaf_digest(data: &[u8], salt: &Salt) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update([LEAF_TAG]);
    hasher.update(salt.0);
    hasher.update(data);
    hasher.finalize().into()
}

fn interior_digest(left: &[u8; 32], right: &[u8; 32]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update([INTERIOR_TAG]);
    hasher.update(left);
    hasher.update(right);
    hasher.finalize().into()
}

/// Fills the tree out to a power of two: the digest of the empty string
/// under the leaf tag, fixed and unambiguous.
pub fn padding_digest() -> [u8; 32] {
    Sha256::digest([LEAF_TAG]).into()
}

/// One sibling on the path from a leaf to the root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProofNode {
    pub sibling: [u8; 32],
    pub sibling_on_left: bool,
}

#[derive(Clone, Debug)]
pub struct SaltedMerkleTree {
    leaves: Vec<(Vec<u8>, Salt)>,
    /// levels[0] is the (padded) leaf layer; the last level is [root].
    levels: Vec<Vec<[u8; 32]>>,
}

/// Builds the tree over `leaves[i]` salted with `salts[i]`, padding to the
/// next power of two.
pub fn merkle_build(leaves: &[Vec<u8>], salts: &[Salt]) -> Result<SaltedMerkleTree, PatternError> {
    if leaves.len() != salts.len() {
        return Err(PatternError::LengthMismatch { leaves: leaves.len(), salts: salts.len() });
    }
    if leaves.is_empty() {
        return Err(PatternError::EmptyTree);
    }
    let mut layer: Vec<[u8; 32]> = leaves
        .iter()
        .zip(salts)
        .map(|(data, salt)| leaf_digest(data, salt))
        .collect();
    let padded = leaves.len().next_power_of_two();
    layer.resize(padded, padding_digest());

    let mut levels = vec![layer];
    while levels.last().expect("non-empty").len() > 1 {
        let below = levels.last().expect("non-empty");
        let above: Vec<[u8; 32]> = below
            .chunks(2)
            .map(|pair| interior_digest(&pair[0], &pair[1]))
            .collect();
        levels.push(above);
    }
    Ok(SaltedMerkleTree {
        leaves: leaves.iter().cloned().zip(salts.iter().copied()).collect(),
        levels,
    })
}

impl SaltedMerkleTree {
    pub fn root(&self) -> [u8; 32] {
        self.levels.last().expect("non-empty")[0]
    }

    /// Levels below the root; 0 for a single leaf.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf(&self, index: usize) -> Option<&(Vec<u8>, Salt)> {
        self.leaves.get(index)
    }

    /// The sibling path for the leaf at `index`, bottom-up.
    pub fn merkle_prove(&self, index: usize) -> Result<Vec<ProofNode>, PatternError> {
        if index >= self.leaves.len() {
            return Err(PatternError::IndexOutOfRange { index, leaves: self.leaves.len() });
        }
        let mut proof = Vec::with_capacity(self.depth());
        let mut position = index;
        for level in &self.levels[..self.depth()] {
            let sibling_on_left = position % 2 == 1;
            let sibling_index = if sibling_on_left { position - 1 } else { position + 1 };
            proof.push(ProofNode { sibling: level[sibling_index], sibling_on_left });
            position /= 2;
        }
        Ok(proof)
    }
}

/// True iff hashing `data` under `salt` and folding in the proof's
/// siblings reconstructs `root`.
pub fn merkle_verify(root: &[u8; 32], data: &[u8], salt: &Salt, proof: &[ProofNode]) -> bool {
    let mut digest = leaf_digest(data, salt);
    for node in proof {
        digest = if node.sibling_on_left {
            interior_digest(&node.sibling, &digest)
        } else {
            interior_digest(&digest, &node.sibling)
        };
    }
    digest == *root
}

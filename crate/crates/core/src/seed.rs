//! Stable seed derivation for independent random sub-streams.

use sha2::{Digest, Sha256};

/// Derives a child seed from a master seed and a path of indices, e.g.
/// `(trial, crossbar)`. The value depends only on the inputs, so work can be
/// scheduled on any number of threads without changing what is sampled.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"xbar-guard/seed");
    hasher.update(master.to_le_bytes());
    for p in path {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

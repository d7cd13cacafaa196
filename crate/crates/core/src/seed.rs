//! Deterministic seed fan-out.
//!
//! Stage seeds are `sha256(global_seed || stage || cell)` truncated to 64 bits,
//! so every stage and matrix cell gets an independent, reproducible stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(global: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed for a numbered sub-stream (training step, sample index, ...).
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    derive_seed(seed, &[tag, &index.to_string()])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

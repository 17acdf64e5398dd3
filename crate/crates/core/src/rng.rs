//! Keyed random streams.
//!
//! Every random decision in the engine draws from a stream derived from a
//! fixed key (run seed, purpose, swap, generation, slot). Streams never
//! depend on evaluation order, so parallel scoring cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Purpose tags so that streams for different decisions never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Passthrough = 2,
    Offspring = 3,
    HybridChoice = 4,
    Noise = 5,
    Weights = 6,
}

pub fn stream(seed: u64, purpose: Purpose, path: &[u64]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((purpose as u64).to_le_bytes());
    for p in path {
        hasher.update(p.to_le_bytes());
    }
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Stream keyed by arbitrary text, e.g. a canonical genome.
pub fn keyed_stream(seed: u64, purpose: Purpose, key: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((purpose as u64).to_le_bytes());
    hasher.update(key.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Short hex digest used for context hashes and genome ids.
pub fn digest(text: &str) -> String {
    let out = Sha256::digest(text.as_bytes());
    out[..8].iter().map(|b| format!("{b:02x}")).collect()
}

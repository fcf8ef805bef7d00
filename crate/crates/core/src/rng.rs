//! Seed derivation.
//!
//! Every random stream in the crate is derived from one run seed by hashing
//! `(seed, subsystem, index)`. Streams are independent of scheduling order,
//! so per-node sampling can run on any number of workers and still produce
//! the same bits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives a 32-byte ChaCha seed from `(seed, subsystem, index)`.
pub fn derive_seed(seed: u64, subsystem: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((subsystem.len() as u64).to_le_bytes());
    hasher.update(subsystem.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

pub fn stream(seed: u64, subsystem: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(seed, subsystem, index))
}

//! Seeded, domain-separated random streams.
//!
//! Every random draw in a match comes from a [`GameRng`] identified by a
//! `(seed, stream_label)` pair. The label is hashed together with the seed to
//! key a ChaCha8 generator, so two streams with different labels never share
//! draws and the same pair always yields the same sequence on every platform.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream label used for horizon (match-length) draws.
pub const HORIZON_STREAM: &str = "horizon";
/// Stream label for the first player's choices.
pub const PLAYER_A_STREAM: &str = "player_a";
/// Stream label for the second player's choices.
pub const PLAYER_B_STREAM: &str = "player_b";

#[derive(Debug, Clone)]
pub struct GameRng {
    seed: u64,
    label: String,
    inner: ChaCha8Rng,
}

impl GameRng {
    pub fn new(seed: u64, stream_label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"ipdlab/stream/v1");
        hasher.update(seed.to_le_bytes());
        hasher.update((stream_label.len() as u64).to_le_bytes());
        hasher.update(stream_label.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        GameRng {
            seed,
            label: stream_label.to_string(),
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_label(&self) -> &str {
        &self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Derives a 64-bit seed from a base seed and an ordered list of labels.
pub fn derive_seed(base_seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"ipdlab/seed/v1");
    hasher.update(base_seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

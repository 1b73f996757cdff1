//! Seeded shuffling that reproduces bit-for-bit across platforms and crate
//! upgrades.
//!
//! The generator is ChaCha8 seeded through `SeedableRng::seed_from_u64`.
//! Bounded draws use rejection sampling on the full 64-bit output and
//! shuffles are a descending Fisher–Yates pass, so any implementation of the
//! same three pieces reproduces the same permutations.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Identifier written into artifacts produced with [`SeededRng`].
pub const PRNG_ID: &str = "chacha8-seed_from_u64/fisher-yates-desc/rejection-u64";

#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `0..bound`. `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        // Largest multiple of `bound` that fits; values at or above it are redrawn.
        let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Opaque lowercase-hex token of `bytes` random bytes.
    pub fn token(&mut self, bytes: usize) -> String {
        let mut out = String::with_capacity(bytes * 2);
        let mut left = bytes;
        while left > 0 {
            let word = self.next_u64().to_le_bytes();
            let take = left.min(8);
            out.push_str(&hex::encode(&word[..take]));
            left -= take;
        }
        out
    }
}

//! Seeded, component-addressed random streams.
//!
//! All randomness in the crate flows through [`StreamRng`]. A stream is
//! identified by (master seed, component tag); the tag is hashed with a
//! hand-rolled FNV-1a64 so stream derivation never depends on std's hasher,
//! which is free to change between releases. Same seed + same tag = same
//! draws, on every platform and toolchain.
//!
//! Tags are plain strings like `"init"`, `"split"`, `"mc-train:s12:q9341"`.
//! Distinct tags give statistically independent ChaCha8 streams.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// FNV-1a 64-bit. Stable by construction; do not replace with std hashing.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A named ChaCha8 stream derived from (master seed, component tag).
/// Cloning forks the current state: both copies produce the same tail.
#[derive(Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn for_component(master_seed: u64, tag: &str) -> Self {
        let tag_hash = fnv1a64(tag.as_bytes());
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&tag_hash.to_le_bytes());
        // Remaining bytes stay zero; ChaCha mixes the full block.
        StreamRng {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in (0, 1]; safe as an Exp inversion input.
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        Normal::new(mean, std).expect("std must be finite").sample(&mut self.inner)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Exponential draw with the given rate, by inversion.
    pub fn exp(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        -self.uniform_open().ln() / rate
    }

    pub fn below(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        if n < 2 {
            return;
        }
        for i in (1..n).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

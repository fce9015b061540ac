//! Seeded randomness shared by dataset generation, weight initialization and
//! random-walk sampling.
//!
//! Every stream is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded from a 64-bit
//! value. ChaCha output is specified independently of platform and word size,
//! so equal seeds give bit-identical draws everywhere. Independent
//! sub-streams are obtained with [`RngStream::derive`], which selects a
//! different ChaCha stream id under the same key rather than consuming draws
//! from the parent.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const ALGORITHM: &str = "chacha8";

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            stream: 0,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    /// A fresh stream keyed by `key`, independent of how many draws have been
    /// taken from `self`.
    pub fn derive(&self, key: u64) -> RngStream {
        let stream = mix64(self.stream ^ mix64(key));
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        RngStream {
            seed: self.seed,
            stream,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    /// Uniform index in `[0, n)`. Panics when `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `[0, n)` in random order.
    pub fn distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a sequence of indices.
pub fn hash_indices(items: &[usize]) -> u64 {
    items
        .iter()
        .fold(mix64(items.len() as u64), |h, &v| mix64(h ^ v as u64))
}

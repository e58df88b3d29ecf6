//! Counter-based noise.
//!
//! Every random draw in the crate is a pure function of a small tuple of
//! integers (seed, stream, indices). There is no generator state to thread
//! through loops, so results do not depend on evaluation order or on how the
//! work is split across threads.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds one more word into a running hash.
#[inline(always)]
fn absorb(h: u64, word: u64) -> u64 {
    mix64(h.wrapping_add(GOLDEN) ^ word.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Derives a child seed from a parent seed and a list of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed ^ GOLDEN), |h, &w| absorb(h, w))
}

/// A fully-hashed counter. Every draw made from a key is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseKey(u64);

impl NoiseKey {
    pub fn new(seed: u64, stream: u64, index: u64) -> Self {
        NoiseKey(absorb(absorb(mix64(seed ^ GOLDEN), stream), index))
    }

    pub fn from_raw(raw: u64) -> Self {
        NoiseKey(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// A sibling key, independent of `self` for distinct `lane` values.
    #[inline]
    pub fn lane(self, lane: u64) -> Self {
        NoiseKey(absorb(self.0, lane))
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(self) -> f64 {
        (mix64(self.0) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (ziggurat over a SplitMix64 stream seeded by the key).
    #[inline]
    pub fn standard_normal(self) -> f64 {
        StandardNormal.sample(&mut KeyStream(self.0))
    }

    #[inline]
    pub fn normal(self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }
}

/// SplitMix64 sequence starting from a key; only lives for one draw.
struct KeyStream(u64);

impl RngCore for KeyStream {
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(GOLDEN);
        mix64(self.0)
    }

    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Indexing scheme for per-product errors inside one GEMM.
///
/// The key for multiplication `(i, k, j)` depends only on
/// `(global_seed, layer_id, i, k, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub global_seed: u64,
    pub layer_id: u64,
}

impl NoisePlan {
    pub fn new(global_seed: u64, layer_id: u64) -> Self {
        NoisePlan {
            global_seed,
            layer_id,
        }
    }

    /// Same seed, different layer.
    pub fn for_layer(self, layer_id: u64) -> Self {
        NoisePlan { layer_id, ..self }
    }

    /// Prefix hash shared by every product of output row `i`.
    #[inline]
    pub fn row_base(&self, i: usize) -> u64 {
        absorb(absorb(mix64(self.global_seed ^ GOLDEN), self.layer_id), i as u64)
    }

    /// Prefix hash shared by every product contributing to output `(i, j)`.
    #[inline]
    pub fn cell_base(&self, i: usize, j: usize) -> u64 {
        absorb(self.row_base(i), j as u64)
    }

    #[inline]
    pub fn key_from_cell(cell_base: u64, k: usize) -> NoiseKey {
        NoiseKey(absorb(cell_base, k as u64))
    }

    #[inline]
    pub fn key(&self, i: usize, k: usize, j: usize) -> NoiseKey {
        Self::key_from_cell(self.cell_base(i, j), k)
    }
}

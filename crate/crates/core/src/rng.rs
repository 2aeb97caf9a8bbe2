//! Deterministic random number streams.
//!
//! The generator is pinned by algorithm so that identical seeds give
//! identical streams everywhere: xoshiro256++ with its state filled by
//! splitmix64 expansion of a 64-bit seed. Replication substreams are
//! derived by reseeding, never by jumping: substream `r` of master seed
//! `s` is the stream seeded with `splitmix64(s XOR r)`.
//!
//! A stream is single-owner. Parallel code derives one substream per
//! replication and never shares it across threads.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// One splitmix64 step: mixes `x` into a decorrelated 64-bit value.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: Xoshiro256PlusPlus,
}

impl RngStream {
    /// Stream for a bare 64-bit seed (splitmix64-expanded into the state).
    pub fn from_seed(seed: u64) -> Self {
        RngStream {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent substream `r` of master seed `seed`.
    pub fn substream(seed: u64, r: u64) -> Self {
        Self::from_seed(splitmix64(seed ^ r))
    }

    /// The 64-bit seed a substream derivation would use; recorded in
    /// report manifests so runs can be replayed piecewise.
    pub fn substream_seed(seed: u64, r: u64) -> u64 {
        splitmix64(seed ^ r)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw on [0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

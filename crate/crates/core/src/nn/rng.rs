//! Seeded, stream-splittable randomness.
//!
//! Every random draw in the crate goes through [`RngStream`], a ChaCha8
//! generator addressed by `(seed, stream)`. The same pair yields the same
//! sequence on every platform, so parallel replications can each take their
//! own stream and stay reproducible regardless of scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on the same seed whose stream id is derived from
    /// this stream's id and `path`.
    pub fn child(&self, path: &[u64]) -> RngStream {
        let mut key = Vec::with_capacity(path.len() + 1);
        key.push(self.stream);
        key.extend_from_slice(path);
        RngStream::new(self.seed, stream_id(&key))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Folds a path of integers into one stream id (splitmix64 finalizer chain).
pub fn stream_id(path: &[u64]) -> u64 {
    let mut h: u64 = 0x6a09_e667_f3bc_c909;
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

//! Seeded random streams.
//!
//! A stream is identified by `(seed, stream_id)`; replication `r` of an
//! experiment uses `stream_id = mix(base_stream, r)`. The generator is
//! xoshiro256++ seeded through SplitMix64, both of which have fixed
//! published output sequences, so draws are identical on every platform.
//!
//! Draw conventions:
//! * uniforms take the top 53 bits of one `u64`: `U = (x >> 11) · 2⁻⁵³ ∈ [0,1)`;
//! * exponentials use the inverse CDF `−ln(1−U)/rate`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// SplitMix64 finalizer; a bijective avalanche mix of one word.
#[inline]
pub fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines two words into one well-mixed word.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    avalanche(a ^ avalanche(b.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: Xoshiro256PlusPlus,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            seed,
            stream_id,
            inner: Xoshiro256PlusPlus::seed_from_u64(mix(seed, stream_id)),
        }
    }

    /// Stream for replication `rep` of the experiment stream `stream_id`.
    pub fn replication(seed: u64, stream_id: u64, rep: u64) -> Self {
        Self::new(seed, mix(stream_id, rep))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -(-self.uniform()).ln_1p() / rate
    }
}

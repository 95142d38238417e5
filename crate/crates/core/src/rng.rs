//! Counter-based random streams.
//!
//! Draw `k` of path `p` under seed `s` is `mix64(key(s, p) + (k + 1) · γ)`
//! with `γ` the 64-bit golden-ratio increment, i.e. a SplitMix64 sequence
//! whose starting point is keyed by `(seed, path)`. Any draw can be
//! recomputed without replaying the stream, and paths never share state.
//!
//! Normals use the inverse CDF, so each normal consumes exactly one uniform
//! and draw `k` is the same normal under every policy (common random
//! numbers).

use statrs::distribution::{ContinuousCDF, Normal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct PathStream {
    key: u64,
    counter: u64,
}

impl PathStream {
    pub fn new(seed: u64, path: u64) -> Self {
        let key = mix64(seed ^ 0xD134_2543_DE82_EF95)
            ^ mix64(path.wrapping_mul(GOLDEN) ^ 0x2545_F491_4F6C_DD1D);
        PathStream {
            key: mix64(key),
            counter: 0,
        }
    }

    /// Draw at an absolute position, independent of the stream cursor.
    #[inline]
    pub fn u64_at(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)),
        )
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.u64_at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        Normal::standard().inverse_cdf(self.next_open01())
    }
}

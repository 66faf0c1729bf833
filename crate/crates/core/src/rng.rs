//! Deterministic random streams.
//!
//! Coupling entries are drawn from a counter-based generator: the value at
//! position `i` is a pure function of `(seed, i)`, so a tensor can be either
//! materialised or regenerated on demand with bit-identical results. Sequential
//! sampling elsewhere (initial points, shuffles, proposals) uses ChaCha8 seeded
//! from derived 64-bit keys.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a master seed with any number of stream identifiers.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(master ^ GOLDEN_GAMMA), |acc, &p| {
        mix64(acc.wrapping_add(GOLDEN_GAMMA) ^ mix64(p.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

/// ChaCha8 generator for sequential sampling.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Counter-based generator keyed by a seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed ^ 0xD1B5_4A32_D192_ED03) }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal at position `index` (Box-Muller on counters `2i`, `2i+1`).
    #[inline]
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = self.uniform(index.wrapping_mul(2));
        let u2 = self.uniform(index.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn fill_normals(&self, start: u64, out: &mut [f64]) {
        for (offset, slot) in out.iter_mut().enumerate() {
            *slot = self.normal(start + offset as u64);
        }
    }
}

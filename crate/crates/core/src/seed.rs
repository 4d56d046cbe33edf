//! Stable seed derivation.
//!
//! Every stochastic decision in a run draws from a ChaCha stream seeded by a
//! value derived from the run seed plus a context label (case id, substep,
//! purpose tag, indices). Derivation is a fixed FNV-1a/splitmix construction
//! rather than `DefaultHasher`, so streams are identical across platforms,
//! Rust releases, and worker counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Accumulates context labels into a derived seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedCtx(u64);

impl SeedCtx {
    pub fn new(base: u64) -> Self {
        // FNV-1a offset basis, pre-mixed with the base seed.
        SeedCtx(splitmix(0xcbf29ce484222325 ^ base))
    }

    pub fn with_str(self, s: &str) -> Self {
        let mut h = self.0;
        for b in s.as_bytes() {
            h = (h ^ u64::from(*b)).wrapping_mul(0x100000001b3);
        }
        SeedCtx(h)
    }

    pub fn with_u64(self, v: u64) -> Self {
        SeedCtx(splitmix(self.0 ^ v.wrapping_mul(0x9e3779b97f4a7c15)))
    }

    pub fn seed(self) -> u64 {
        splitmix(self.0)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

//! Seeded, splittable random streams.
//!
//! Streams are ChaCha20 keyed by the user seed with the 64-bit stream id
//! selecting an independent counter space, so every consumer draws from its
//! own reproducible sequence regardless of call order or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Name and version of the generator, recorded in reports.
pub const GENERATOR: &str = "chacha20-stream/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRng {
    seed: u64,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        SplitRng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream number `id`.
    pub fn stream(&self, id: u64) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(b"bppeps/1");
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(id);
        rng
    }

    /// Derive a child splitter, e.g. one per vertex.
    pub fn split(&self, id: u64) -> SplitRng {
        // SplitMix64 finalizer keeps child seeds well separated.
        let mut z = self.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        SplitRng { seed: z ^ (z >> 31) }
    }
}

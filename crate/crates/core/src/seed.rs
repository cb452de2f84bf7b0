//! Splittable seeding: one 64-bit root expands into independent named
//! streams, so adding a consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_tag(tag: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child node for a named stream.
    pub fn child(&self, tag: &str) -> SeedTree {
        self.index(hash_tag(tag))
    }

    /// Child node for a numbered stream (replicate index, etc.).
    pub fn index(&self, i: u64) -> SeedTree {
        SeedTree {
            seed: mix(self.seed.wrapping_add(GOLDEN).wrapping_mul(GOLDEN) ^ mix(i.wrapping_add(GOLDEN))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

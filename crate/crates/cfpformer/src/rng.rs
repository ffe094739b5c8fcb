//! Deterministic seeding: one root seed, split per layer by label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splits one root seed into independent per-layer streams keyed by a
/// stable label, so adding a layer does not shift every other layer's
/// initialization.
#[derive(Debug, Clone, Copy)]
pub struct SeedSplitter {
    seed: u64,
}

impl SeedSplitter {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive a child splitter, e.g. per stage or per sample index.
    pub fn child(&self, label: &str) -> SeedSplitter {
        SeedSplitter {
            seed: self.seed ^ fnv1a(label.as_bytes()),
        }
    }

    pub fn child_index(&self, index: u64) -> SeedSplitter {
        SeedSplitter {
            seed: self
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9) | 1),
        }
    }

    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(label.as_bytes()))
    }
}

// FNV-1a: stable across platforms and toolchains, unlike std's hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

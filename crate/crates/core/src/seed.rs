//! Deterministic random-number plumbing.
//!
//! A run owns one root seed. Components obtain their own generator with
//! [`SeedSource::fork`], keyed by a stable label, so adding a consumer in one
//! place never shifts the random stream seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSource {
    root: u64,
}

impl SeedSource {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Child seed for `label`.
    pub fn derive(&self, label: &str) -> u64 {
        splitmix64(self.root ^ fnv1a(label.as_bytes()))
    }

    /// Child seed for the `index`-th item under `label`.
    pub fn derive_indexed(&self, label: &str, index: u64) -> u64 {
        splitmix64(self.derive(label) ^ splitmix64(index.wrapping_add(0x9e37_79b9)))
    }

    pub fn fork(&self, label: &str) -> Rng {
        Rng::seed_from_u64(self.derive(label))
    }

    pub fn fork_indexed(&self, label: &str, index: u64) -> Rng {
        Rng::seed_from_u64(self.derive_indexed(label, index))
    }

    /// A sub-source, for components that fork further.
    pub fn child(&self, label: &str) -> SeedSource {
        SeedSource::new(self.derive(label))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a string, used for split assignment.
pub fn stable_hash(s: &str) -> u64 {
    splitmix64(fnv1a(s.as_bytes()))
}

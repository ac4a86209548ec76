//! Seed derivation. Every random stream in a run is derived from one root
//! seed and a fixed tag, so runs are reproducible and streams independent.

use serde::{Deserialize, Serialize};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `seed` with an integer stream index.
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Mixes `seed` with a string tag.
pub fn derive_tagged(seed: u64, tag: &str) -> u64 {
    let h = tag
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3));
    derive(seed, h)
}

/// The named streams used by one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub root: u64,
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
    pub gate_noise: u64,
    pub finetune: u64,
    pub baseline: u64,
}

impl RunSeeds {
    pub fn from_root(root: u64) -> Self {
        RunSeeds {
            root,
            data: derive_tagged(root, "data"),
            split: derive_tagged(root, "split"),
            init: derive_tagged(root, "init"),
            shuffle: derive_tagged(root, "shuffle"),
            gate_noise: derive_tagged(root, "gate-noise"),
            finetune: derive_tagged(root, "finetune"),
            baseline: derive_tagged(root, "baseline"),
        }
    }
}

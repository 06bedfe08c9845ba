//! Deterministic seed expansion.
//!
//! Every random stream in a run is a ChaCha8 generator keyed by a 64-bit seed
//! derived from the run seed with splitmix64, so streams never share state and
//! a run is a pure function of its seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `path` under `seed`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named stream purposes inside one training run.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const REFERENCE_BATCHES: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SCHEDULE: u64 = 5;
    pub const ATTACK_INIT: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const TRAIN: u64 = 8;
    pub const NN_ATTACK: u64 = 9;
}

//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit seed. Independent parts of an
//! experiment draw from distinct ChaCha streams of the same key, so adding a
//! consumer never perturbs the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers for the consumers inside one experiment.
pub mod streams {
    pub const SOURCE: u64 = 1;
    pub const TARGET: u64 = 2;
    pub const TEST_SOURCE: u64 = 3;
    pub const TEST_TARGET: u64 = 4;
    pub const INIT_FLOW: u64 = 10;
    pub const INIT_SCORE: u64 = 11;
    pub const TRAIN: u64 = 20;
    pub const SIMULATE: u64 = 30;
    pub const SHUFFLE: u64 = 40;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; derives a child seed from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

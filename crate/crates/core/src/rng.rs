//! Seed derivation. Every random quantity flows from one user seed through
//! named streams so that adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer applied to `a ^ b`-style combinations.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(29) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed for a named stream.
pub fn stream_seed(seed: u64, stream: &str) -> u64 {
    mix(seed, crate::store::fnv1a64(stream.as_bytes()))
}

pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream))
}

/// Standard stream names.
pub mod streams {
    pub const MODEL: &str = "model";
    pub const CALIBRATION: &str = "calibration";
    pub const EVAL: &str = "eval";
    pub const SENSITIVITY: &str = "sensitivity";
}

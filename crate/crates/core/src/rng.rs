//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator (counter-based, 64-bit seedable).
//! Replicate `r` of a run with master seed `s` uses the stream seeded by
//! `replicate_seed(s, r)`, a SplitMix64 finalizer applied to `s` and `r`.
//! Other implementations can reproduce the stream structure from this
//! description even when their generators differ bitwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `seed`.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(GOLDEN))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

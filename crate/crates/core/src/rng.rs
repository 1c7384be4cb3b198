//! Seed-derived random streams.
//!
//! Every stream is addressed by a master seed plus a path of integers
//! (e.g. `[ATTACK, example, iteration]`), so a sub-computation draws the same
//! numbers no matter which other work ran before it or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: u64 = 1;
pub const SPLIT: u64 = 2;
pub const INIT: u64 = 3;
pub const SHUFFLE: u64 = 4;
pub const ATTACK: u64 = 5;
pub const SURROGATE: u64 = 6;
pub const TRAIN: u64 = 7;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path into a single 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, p| {
        splitmix64(acc ^ splitmix64(*p))
    })
}

pub fn substream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

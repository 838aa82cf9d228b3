//! Seeded random streams.
//!
//! Every generator and evaluation owns its stream; sub-tasks derive their own
//! stream from `(seed, index)` so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for sub-task `index` of a run seeded with `seed`.
pub fn derived(seed: u64, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, index))
}

/// Seed for sub-task `index`; splitmix64 finalizer so neighbouring indices
/// land far apart.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

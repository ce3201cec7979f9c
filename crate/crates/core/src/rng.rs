//! Seeded random streams.
//!
//! Every random draw in the toolkit comes from a xoshiro256** generator whose
//! state is expanded from a 64-bit seed by SplitMix64. Independent streams
//! (per subject, per bin, per fold/epoch) are derived by mixing the root seed
//! with stream coordinates, so results never depend on iteration order or
//! thread scheduling.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of a sub-stream identified by `path` below `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream tags keep sub-seeds of different subsystems apart.
pub mod tag {
    pub const SYNTH: u64 = 0x5359_4e54;
    pub const BALANCE: u64 = 0x4241_4c41;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const DROPOUT: u64 = 0x4452_4f50;
}

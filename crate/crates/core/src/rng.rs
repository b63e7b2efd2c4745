//! Seeded random streams.
//!
//! Every random decision in the crate draws from a [`Xoshiro256StarStar`]
//! generator whose 256-bit state is expanded from a 64-bit seed with
//! SplitMix64. Independent streams (one per generated case, per bootstrap
//! resample, per epoch shuffle) are derived by mixing the parent seed with a
//! stream index or a subsystem name, so the order in which streams are
//! consumed never affects their contents.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type StreamRng = Xoshiro256StarStar;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Seed for a named subsystem (FNV-1a over the name, then mixed).
pub fn derive_named(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive_seed(seed, h)
}

pub fn stream(seed: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, index))
}

pub fn named_stream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_named(seed, name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = stream(7, 3).random_iter().take(4).collect();
        let b: Vec<u64> = stream(7, 3).random_iter().take(4).collect();
        let c: Vec<u64> = stream(7, 4).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_named(1, "shuffle"), derive_named(1, "init"));
    }

    #[test]
    fn splitmix_reference_value() {
        // first output of SplitMix64 seeded with 0
        assert_eq!(mix64(GOLDEN), 0xE220_A839_7B1D_CDAF);
    }
}

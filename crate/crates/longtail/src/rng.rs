//! Seeded random number generation.
//!
//! All randomness in the crate flows through [`seeded_rng`] so that plans,
//! initializations and generated datasets are bit-reproducible for a fixed
//! seed. The generator algorithm is pinned (ChaCha with 8 rounds) and its
//! identifier is written into checkpoints so a checkpoint records exactly
//! which stream produced it.
//!
//! Independent streams (per epoch, per image, per purpose) are derived from
//! one base seed with [`derive_seed`]: the purpose tag is hashed with FNV-1a,
//! combined with the base seed and index, and diffused through two rounds of
//! SplitMix64.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier of the pinned PRNG algorithm, recorded in checkpoints.
pub const RNG_ALGORITHM: &str = "chacha8";

/// SplitMix64 output function (Steele, Lea & Flood 2014).
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive an independent stream seed from a base seed, a purpose tag and an
/// index (epoch number, item number, ...).
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a(tag.as_bytes())).wrapping_add(index))
}

/// Construct the pinned generator for a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_deterministic_and_distinct() {
        let a = derive_seed(42, "epoch", 0);
        let b = derive_seed(42, "epoch", 0);
        let c = derive_seed(42, "epoch", 1);
        let d = derive_seed(42, "reinit", 0);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn rng_streams_repeat_for_fixed_seed() {
        let mut r1 = seeded_rng(7);
        let mut r2 = seeded_rng(7);
        let v1: Vec<u64> = (0..16).map(|_| r1.gen()).collect();
        let v2: Vec<u64> = (0..16).map(|_| r2.gen()).collect();
        assert_eq!(v1, v2);
    }
}

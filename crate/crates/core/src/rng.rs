//! Seeded randomness.
//!
//! Every random draw in the crate comes from `Xoshiro256PlusPlus` seeded via
//! SplitMix64 (`seed_from_u64`). Per-item streams are derived from the run seed
//! and a stable key so results do not depend on processing order.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream seed from `seed` and a key, stable across platforms and releases.
pub fn derive_seed(seed: u64, key: &str, coords: &[u64]) -> u64 {
    // FNV-1a over the key bytes, then fold in the coordinates.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut s = mix(seed ^ h);
    for &c in coords {
        s = mix(s ^ c);
    }
    s
}

pub fn rng_for(seed: u64, key: &str, coords: &[u64]) -> Rng {
    rng(derive_seed(seed, key, coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_stable_and_distinct() {
        assert_eq!(derive_seed(42, "a", &[1, 2]), derive_seed(42, "a", &[1, 2]));
        assert_ne!(derive_seed(42, "a", &[1, 2]), derive_seed(42, "a", &[2, 1]));
        assert_ne!(derive_seed(42, "a", &[]), derive_seed(43, "a", &[]));
        let mut a = rng_for(7, "x", &[0]);
        let mut b = rng_for(7, "x", &[0]);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }
}

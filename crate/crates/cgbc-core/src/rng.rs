//! Seeded, splittable randomness.
//!
//! Every stochastic choice in the pipeline flows from an explicit `u64`
//! seed. Sub-streams are derived by name and index with [`sub_seed`], so
//! per-variant / per-cell seeds do not depend on evaluation order.

use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha20Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes. Stable across platforms and releases; also used
/// as the fixed-salt token-feature hash.
pub fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut h = FNV_OFFSET ^ salt;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of a named sub-stream. Independent of the order in
/// which sub-streams are drawn.
pub fn sub_seed(seed: u64, label: &str, index: u64) -> u64 {
    mix64(seed ^ fnv1a(label.as_bytes(), 0).rotate_left(17) ^ mix64(index))
}

/// The one generator used throughout the crate.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_are_order_independent_and_distinct() {
        let a = sub_seed(7, "variant", 0);
        let b = sub_seed(7, "variant", 1);
        let c = sub_seed(7, "noise", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        // Re-derivation is pure.
        assert_eq!(a, sub_seed(7, "variant", 0));
    }

    #[test]
    fn fnv_matches_reference_vector() {
        // FNV-1a("a") with zero salt.
        assert_eq!(fnv1a(b"a", 0), 0xaf63dc4c8601ec8c);
    }
}

//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit seed or RNG. Independent jobs
//! derive their stream from `(master seed, job key)`, so results never depend
//! on scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed for a named job under a master seed.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    // FNV-1a over the key bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

pub fn derive_rng(master: u64, key: &str) -> Rng {
    rng_from_seed(derive_seed(master, key))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "fold-1"), derive_seed(7, "fold-1"));
        assert_ne!(derive_seed(7, "fold-1"), derive_seed(7, "fold-2"));
        assert_ne!(derive_seed(7, "fold-1"), derive_seed(8, "fold-1"));
    }
}

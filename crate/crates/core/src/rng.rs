//! Seed derivation for reproducible random substreams.
//!
//! Every random draw in the pipeline comes from a [`ChaCha8Rng`] seeded by a
//! pure function of a root seed and a path of integers (epoch, batch, slot,
//! ...). Worker count and scheduling therefore never change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of stream identifiers into a new seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(root: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

/// Stream tags so distinct consumers of one root seed never collide.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const MASK: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const KSHOT: u64 = 6;
    pub const SYNTH: u64 = 7;
    pub const TSNE: u64 = 8;
    pub const SHUFFLE: u64 = 9;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
        let a: u64 = rng_from(3, &[4]).random();
        let b: u64 = rng_from(3, &[4]).random();
        assert_eq!(a, b);
    }
}

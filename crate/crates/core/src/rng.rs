//! Reproducible, splittable randomness.
//!
//! A [`SeedTree`] is a 64-bit key. Children are derived by mixing a tag into
//! the key, so a stream keyed by `(seed, phase, user)` is independent of how
//! many draws other streams made. Each leaf is turned into a ChaCha8 stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree(splitmix(seed))
    }

    pub fn key(&self) -> u64 {
        self.0
    }

    pub fn child(&self, tag: u64) -> SeedTree {
        SeedTree(splitmix(self.0 ^ splitmix(tag.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    pub fn path(&self, tags: &[u64]) -> SeedTree {
        tags.iter().fold(*self, |acc, &t| acc.child(t))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Phase tags used to key the streams of the randomized algorithms.
pub mod phase {
    pub const DEMAND: u64 = 1;
    pub const CHANNEL_TRIAL: u64 = 2;
    pub const ALLOCATE_SMALL: u64 = 3;
    pub const DECOMPOSE: u64 = 4;
    pub const RETAIN: u64 = 5;
    pub const DYADIC: u64 = 6;
    pub const PERTURB: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const TRIAL: u64 = 9;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn children_are_distinct_and_stable() {
        let root = SeedTree::new(7);
        assert_ne!(root.child(1), root.child(2));
        assert_eq!(root.path(&[1, 2]), root.child(1).child(2));
        let a: f64 = root.child(3).rng().gen();
        let b: f64 = root.child(3).rng().gen();
        assert_eq!(a, b);
    }
}

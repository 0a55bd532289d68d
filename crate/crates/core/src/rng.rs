//! Splittable seed streams.
//!
//! Every random draw in the crate comes from a [`SeedStream`] derived by
//! hashing a parent stream with an integer tag. Streams for different agents,
//! time steps and episodes are therefore independent of how work is scheduled
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream(u64);

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    }

    /// Independent child stream identified by `tag`.
    pub fn child(self, tag: u64) -> Self {
        SeedStream(mix(self.0 ^ mix(tag.wrapping_add(0x6a09_e667_f3bc_c909))))
    }

    /// Child stream for a string label, e.g. a subsystem name.
    pub fn named(self, label: &str) -> Self {
        let tag = label
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        self.child(tag)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn children_are_distinct_and_stable() {
        let s = SeedStream::new(7);
        assert_eq!(s.child(3), SeedStream::new(7).child(3));
        assert_ne!(s.child(3), s.child(4));
        assert_ne!(s.child(3).child(4), s.child(4).child(3));
        assert_ne!(s.named("policy"), s.named("noise"));
        let a: u64 = s.child(1).rng().random();
        let b: u64 = s.child(1).rng().random();
        assert_eq!(a, b);
    }
}

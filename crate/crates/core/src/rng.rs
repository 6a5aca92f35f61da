//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every consumer of randomness gets its own SplitMix64 stream keyed by
//! `(master seed, purpose tag, index)`, so generating users in parallel or in
//! a different order never changes what any single user sees.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

/// Purpose tags for derived streams.
pub mod tag {
    pub const CATALOG: u64 = 0x01;
    pub const PREFS: u64 = 0x02;
    pub const OBSERVATIONAL: u64 = 0x03;
    pub const INTERVENTIONAL: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const INIT: u64 = 0x06;
    pub const SHUFFLE: u64 = 0x07;
    pub const DRIFT: u64 = 0x08;
    pub const FTILDE: u64 = 0x09;
    pub const CSREC: u64 = 0x0a;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let a = mix64(master.wrapping_add(GOLDEN));
    let b = mix64(a ^ tag.wrapping_mul(GOLDEN));
    mix64(b ^ index.wrapping_add(1).wrapping_mul(GOLDEN))
}

pub fn stream(master: u64, tag: u64, index: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(derive_seed(master, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, tag::PREFS, 3), |r, _: u64| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, tag::PREFS, 3), |r, _: u64| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(derive_seed(7, tag::PREFS, 3), derive_seed(7, tag::PREFS, 4));
        assert_ne!(derive_seed(7, tag::PREFS, 3), derive_seed(7, tag::OBSERVATIONAL, 3));
        assert_ne!(derive_seed(7, tag::PREFS, 3), derive_seed(8, tag::PREFS, 3));
    }
}

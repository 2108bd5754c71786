//! Deterministic RNG substreams.
//!
//! Every path draws from its own ChaCha8 stream keyed by
//! `(master_seed, domain, path_index)`, so results never depend on how paths
//! are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates independent uses of the same master seed (e.g. the two
/// ensembles of a coupling, or the noise-floor resample of a decay run).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Domain(pub u64);

impl Domain {
    pub const PRIMARY: Domain = Domain(0);

    pub fn child(self, tag: u64) -> Domain {
        Domain(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The generator for one path.
pub fn substream(master_seed: u64, domain: Domain, path_index: u64) -> ChaCha8Rng {
    let key = splitmix64(master_seed) ^ splitmix64(domain.0.wrapping_mul(0xd1b5_4a32_d192_ed03));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(path_index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, Domain::PRIMARY, 3).random();
        let b: u64 = substream(7, Domain::PRIMARY, 3).random();
        let c: u64 = substream(7, Domain::PRIMARY, 4).random();
        let d: u64 = substream(7, Domain::PRIMARY.child(1), 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}

//! Seed derivation for parallel replicas.
//!
//! Replica r uses `splitmix64(splitmix64(base_seed) ^ r)` as its ChaCha seed.
//! The base is hashed before the xor: otherwise nearby base seeds produce
//! permutations of one another's replica-seed sets (small ^ small stays
//! small), which silently equalizes ensemble statistics across studies.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// One step of the splitmix64 output function (Steele, Lea, Flood 2014).
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Seed for replica `index` derived from `base_seed`.
pub fn replica_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base_seed) ^ index)
}

/// The generator used throughout the simulator.
pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference sequence seeded at 0: the update
        // constant itself hashed, then successive golden-ratio offsets.
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(0x9e3779b97f4a7c15), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn replica_seeds_distinct() {
        let base = 42;
        let mut seen = std::collections::HashSet::new();
        for r in 0..10_000 {
            assert!(seen.insert(replica_seed(base, r)));
        }
    }

    #[test]
    fn nearby_bases_give_disjoint_seed_sets() {
        let a: std::collections::HashSet<u64> = (0..256).map(|r| replica_seed(1, r)).collect();
        let b: std::collections::HashSet<u64> = (0..256).map(|r| replica_seed(2, r)).collect();
        assert!(a.is_disjoint(&b), "replica seed sets overlap across bases");
    }
}

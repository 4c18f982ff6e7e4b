//! Seeded random streams.
//!
//! Every random decision in the simulator draws from a [`SimRng`] obtained
//! through [`stream`]. A stream is identified by the run seed, a purpose tag
//! and a list of integer ids (client id, round, group id, ...). The
//! identifiers are folded through SplitMix64 into a 64-bit key which seeds a
//! ChaCha8 generator, so two streams never share state and the draws a
//! component sees do not depend on which other components ran first or on
//! which thread they ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator behind every stream.
pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `(seed, tag, ids)` into a 64-bit stream key.
pub fn derive_key(seed: u64, tag: &str, ids: &[u64]) -> u64 {
    let mut h = mix64(seed);
    for &b in tag.as_bytes() {
        h = mix64(h ^ u64::from(b));
    }
    // separator so ("ab", [1]) and ("a", [b'b', 1]) cannot collide
    h = mix64(h ^ 0xFF00_0000_0000_0000 ^ ids.len() as u64);
    for &id in ids {
        h = mix64(h ^ id);
    }
    h
}

/// Opens the stream for `(seed, tag, ids)`.
pub fn stream(seed: u64, tag: &str, ids: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_key(seed, tag, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = (0..8).map(|_| 0).scan(stream(7, "x", &[1, 2]), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..8).map(|_| 0).scan(stream(7, "x", &[1, 2]), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_ids_give_distinct_keys() {
        let keys = [
            derive_key(7, "x", &[1, 2]),
            derive_key(7, "x", &[2, 1]),
            derive_key(7, "y", &[1, 2]),
            derive_key(8, "x", &[1, 2]),
            derive_key(7, "x", &[1]),
        ];
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                assert_ne!(keys[i], keys[j]);
            }
        }
    }
}

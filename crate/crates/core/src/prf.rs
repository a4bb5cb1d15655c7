//! Keyed hashing used for every random stream in the crate.
//!
//! All randomness is a pure function of a 64-bit seed and integer labels, so
//! that a cell, a point or a pair of points always sees the same values no
//! matter which window or algorithm asked for them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// One step of the SplitMix64 generator applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a sequence of words into one. Order matters.
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = splitmix64(words.len() as u64 ^ 0x5851_f42d_4c95_7f2d);
    for &w in words {
        h = splitmix64(h ^ splitmix64(w));
    }
    h
}

/// Map a hash to the open unit interval (0, 1).
pub fn unit_open(h: u64) -> f64 {
    ((h >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// A ChaCha stream keyed by the given words.
pub fn stream(words: &[u64]) -> ChaCha8Rng {
    let base = hash_words(words);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(base ^ (i as u64).wrapping_mul(GOLDEN)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seed of replication `r` derived from a base seed.
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    seed ^ splitmix64(r)
}

pub fn split_u128(x: u128) -> [u64; 2] {
    [(x >> 64) as u64, x as u64]
}

/// Parse a seed given in decimal or as `0x`-prefixed hex.
pub fn parse_seed(s: &str) -> Option<u64> {
    let t = s.trim();
    match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => t.parse().ok(),
    }
}

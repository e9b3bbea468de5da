//! Counter-based randomness.
//!
//! Every stochastic decision is a pure function of a seed and a counter, so
//! results do not depend on evaluation order. Seeds for sub-streams (rounds,
//! clients, links) are derived by hashing their coordinates together.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective 64-bit mixer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C909, |acc, &p| {
        mix64(acc.wrapping_add(GOLDEN) ^ mix64(p.wrapping_add(GOLDEN)))
    })
}

/// Uniform draw in `[0, 1)` with 53 bits of resolution for element `index`
/// of the stream identified by `seed`.
#[inline]
pub fn unit_f64(seed: u64, index: u64) -> f64 {
    let bits = mix64(seed ^ mix64(index.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential generator for data shuffling and synthetic data.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Domain tags keeping derived seeds for different purposes apart.
pub mod tag {
    pub const UPLINK: u64 = 0x5550;
    pub const DOWNLINK: u64 = 0x444E;
    pub const BATCH: u64 = 0xBA7C;
    pub const INIT: u64 = 0x1417;
    pub const PARTITION: u64 = 0x9A27;
}

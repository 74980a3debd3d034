//! Seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator seeded with a 64-bit
//! value derived here, so problem instances and runs are reproducible and
//! independent of scheduling order.

/// Domain tag for problem-generator seeds.
pub const TAG_PROBLEM: u64 = 0x7072_6f62_6c65_6d00; // "problem\0"
/// Domain tag for optimizer restart seeds.
pub const TAG_RUN: u64 = 0x7275_6e00_0000_0000; // "run\0"

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into one seed: `h = splitmix64(h ^ part)` starting from 0.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |h, &p| splitmix64(h ^ p))
}

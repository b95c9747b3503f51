//! Per-repetition seeds.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Steele, Lea and Flood 2014).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one (condition, repetition) cell: the base seed is mixed, then
/// the condition and the repetition are folded in, each followed by a mix.
pub fn derive_seed(base_seed: u64, condition_id: usize, repetition: u64) -> u64 {
    mix(mix(mix(base_seed) ^ condition_id as u64) ^ repetition)
}

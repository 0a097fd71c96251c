//! Seeded random number generation.
//!
//! Every stochastic component draws from ChaCha8 (`rand_chacha` 0.9), seeded
//! from a single top-level seed through [`derive_seed`]. Normal variates use
//! `rand_distr` 0.5's `StandardNormal`. Both crates document value-stable
//! output across patch releases, which is what byte-identical reruns rely on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Name recorded in output metadata.
pub const GENERATOR_NAME: &str = "chacha8/rand_chacha-0.9";

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Expands a top-level seed into a per-component seed.
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    // FNV-1a over the label, then mixed with the parent seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

//! Seeded randomness.
//!
//! Every generator in the crate draws from [`ChaCha8Rng`], whose output stream
//! is fixed by the ChaCha specification and therefore identical on every
//! platform. Derived seeds (per trial, per deflation stage) are produced by
//! folding the components through the SplitMix64 finalizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a seed path, e.g. `derive_seed(master, &[n, k, trial])`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

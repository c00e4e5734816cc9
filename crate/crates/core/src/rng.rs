//! Reproducible random streams.
//!
//! All randomness uses ChaCha20 (`rand_chacha::ChaCha20Rng`). A 64-bit seed
//! is expanded to the 256-bit key by `SeedableRng::seed_from_u64` (PCG32
//! expansion) and independent streams are selected with the 64-bit ChaCha
//! stream id, so replicate `m` of a run seeded with `seed` always reads
//! the same numbers whatever the scheduling. Gaussian variates come from
//! `rand_distr::StandardNormal` (ziggurat).
//!
//! Composite seeds (dataset `r` of an experiment, the test seed of method
//! `j` in replicate `r`, ...) are derived with the SplitMix64 finalizer.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(seed, domain, index)`.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain) ^ index)
}

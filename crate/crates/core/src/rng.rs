//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every stochastic component takes a plain `u64` seed. Sub-streams (per epoch,
//! per batch row, per perturbation) are derived by mixing the parent seed with a
//! stream label, so results never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a sequence of stream labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(seed: u64, labels: &[u64]) -> Rng {
    rng_from_seed(derive_seed(seed, labels))
}

// Stream labels used by the optimization loop.
pub(crate) const STREAM_INIT_DESIGN: u64 = 1;
pub(crate) const STREAM_INIT_CRITIC: u64 = 2;
pub(crate) const STREAM_PRIOR: u64 = 3;
pub(crate) const STREAM_NOISE: u64 = 4;
pub(crate) const STREAM_PAIRING: u64 = 5;
pub(crate) const STREAM_ES: u64 = 6;

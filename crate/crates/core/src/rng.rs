//! Deterministic seed derivation.
//!
//! Every random task (a tree, a fold, a chain) gets its own generator seeded
//! from `(base seed, stream id)`, so results do not depend on scheduling or
//! on how many threads run the tasks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream id into an independent-looking seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    rng_from(derive_seed(seed, stream))
}

// Stream ids for the stages of a fit.
pub(crate) const STREAM_TREES: u64 = 1;
pub(crate) const STREAM_RULES: u64 = 2;
pub(crate) const STREAM_GIBBS: u64 = 3;

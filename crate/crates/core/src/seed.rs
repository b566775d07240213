//! Seed derivation and RNG construction.
//!
//! Every random stream is a ChaCha8 generator seeded from a (base, stream, index)
//! triple, so trials, rounds and sub-procedures never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags for [`derive`].
pub mod stream {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const STRATEGY: u64 = 3;
    pub const SYNTH: u64 = 4;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

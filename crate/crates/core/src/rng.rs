//! Reproducible random streams.
//!
//! Every consumer derives its own ChaCha stream from `(seed, purpose, index)`,
//! so results do not depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Labels = 1,
    Initial = 2,
    GpNoise = 3,
    Patterns = 4,
    Missingness = 5,
    Chain = 6,
    Replicate = 7,
    Generic = 8,
}

/// Independent stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ index);
    rng
}

/// Mixes a replicate index into a base seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

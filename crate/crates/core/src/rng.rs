//! Seeded random streams.
//!
//! Every consumer of randomness (a tree, a station generator, a sampler
//! window) gets its own ChaCha8 stream derived from the run seed and a
//! path of stream labels. Streams never share state, so results do not
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

// Stream labels for the top-level consumers.
pub const STREAM_SYNTH_STATION: u64 = 1;
pub const STREAM_SYNTH_WEATHER: u64 = 2;
pub const STREAM_SAMPLER: u64 = 3;
pub const STREAM_FOREST: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of labels into a 64-bit key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

/// An independent stream for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

//! Seeded, counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by an
//! explicit `(seed, stream)` pair, so draws never depend on evaluation order
//! or on how work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::ImageTensor;

/// Well-known stream identifiers.
pub mod streams {
    pub const INIT_NOISE: u64 = 1;
    pub const CONV_WEIGHTS: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const TRAINING_LOSS: u64 = 5;
    pub const ROBUSTNESS: u64 = 6;
    pub const EQUIVALENCE: u64 = 7;
}

/// Returns the generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a sub-index into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Standard-normal tensor of the given shape.
pub fn normal_tensor(rng: &mut ChaCha8Rng, channels: usize, height: usize, width: usize) -> ImageTensor {
    let data = (0..channels * height * width).map(|_| standard_normal(rng)).collect();
    ImageTensor::from_vec(channels, height, width, data).expect("normal draws are finite")
}

//! Seed derivation for reproducible, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The generator used everywhere in the crate.
pub type SpcrRng = ChaCha12Rng;

/// Purpose tags keep the streams of one replicate apart from each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TrainData = 1,
    TestData = 2,
    Bandwidth = 3,
    Folds = 4,
    Measurement = 5,
    Baseline = 6,
    Split = 7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// `master ⊕ index`, with the index spread over all 64 bits so that nearby
/// indices do not collide with nearby master seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    master ^ index.wrapping_add(1).wrapping_mul(GOLDEN)
}

pub fn stream_seed(master: u64, index: u64, stream: Stream) -> u64 {
    derive_seed(derive_seed(master, index), (stream as u64) << 48)
}

pub fn rng_from_seed(seed: u64) -> SpcrRng {
    SpcrRng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, index: u64, stream: Stream) -> SpcrRng {
    rng_from_seed(stream_seed(master, index, stream))
}

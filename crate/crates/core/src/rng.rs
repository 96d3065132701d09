//! Seeded generators. Every run derives independent streams from one
//! seed: stream 0 for initialization, stream `k + 1` for step `k`, and
//! streams counted down from `u64::MAX` for everything outside training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0)
}

/// Generator for training step `step` (0-based). Depends only on
/// `(seed, step)`, which is what makes resumed runs identical.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    stream_rng(seed, step + 1)
}

/// Stream for purposes other than initialization and training steps.
pub fn aux_rng(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    stream_rng(seed, u64::MAX - purpose as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    /// Drawing or subsampling the training shapes.
    Data = 0,
    /// Sampling from a trained model.
    Sample = 1,
    /// Evaluation sets and metric draws.
    Eval = 2,
}

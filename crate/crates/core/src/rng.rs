//! Seeded random streams.
//!
//! Every training step (or federated round) t draws from its own ChaCha20
//! stream: the key is derived from the run seed and the stream id is t. Within
//! a step, sampling draws come first and Gaussian noise draws follow in
//! coordinate order, one vector per noise source.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream id reserved for dataset generation and other per-run draws.
pub const SETUP_STREAM: u64 = u64::MAX;

pub type StepRng = ChaCha20Rng;

/// The generator for step `stream` of a run seeded with `seed`.
pub fn step_rng(seed: u64, stream: u64) -> StepRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `dim` independent standard normal draws.
pub fn gaussian_vec(rng: &mut StepRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

//! Seeded RNG derivation.
//!
//! Every random draw in the pipeline comes from a `ChaCha8Rng` keyed by
//! (root seed, stream tag, index), so any part of a run can be replayed in
//! isolation and two runs with the same seed are bitwise identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_EPOCH_ORDER: u64 = 2;
pub const STREAM_DROPOUT: u64 = 3;
pub const STREAM_KMEANS: u64 = 4;
pub const STREAM_SYNTH: u64 = 5;

/// Build the generator for one (seed, stream, index) triple.
pub fn derived_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Standard normal draw (Box-Muller on two uniform draws).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // 1 - u maps [0,1) to (0,1] so the log argument is never zero.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform draw in [-limit, limit).
pub fn symmetric_uniform(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    limit * (2.0 * rng.random::<f64>() - 1.0)
}

//! Seeded, splittable randomness. Every random draw in the crate flows from
//! one user-facing seed; independent purposes use distinct ChaCha streams so
//! that adding a consumer never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers; one per independent consumer of randomness.
pub mod streams {
    pub const KFOLD: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const EPOCH_SHUFFLE: u64 = 3;
    pub const SURROGATE: u64 = 4;
}

/// Deterministic generator for (`seed`, `stream`).
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

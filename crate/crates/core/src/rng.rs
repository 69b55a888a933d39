//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes an explicit `&mut StreamRng`. Independent
//! sub-streams are derived from a `(seed, stream)` pair so that parallel
//! workers never share state and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// A fresh generator for `seed`, positioned on `stream`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child generator from a parent without disturbing sibling
/// children: the parent only advances by one `u64`.
pub fn split(parent: &mut StreamRng, stream_id: u64) -> StreamRng {
    use rand::Rng;
    let seed: u64 = parent.random();
    stream(seed, stream_id)
}

/// Well-known stream ids, kept apart so that e.g. the held-out test set never
/// depends on the training seed.
pub mod streams {
    pub const TRAIN_TASKS: u64 = 1;
    pub const TRAIN_NOISE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TEST_SET: u64 = 4;
    pub const EVAL_SAMPLES: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const FOLDS: u64 = 7;
}

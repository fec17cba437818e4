//! Seeded random streams.
//!
//! Every batch of paths draws from its own ChaCha stream selected by
//! `(seed, stream index)`, so results do not depend on how batches are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Independent generator for `(seed, index)`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn fill_normals(rng: &mut StreamRng, out: &mut [f64]) {
    for z in out.iter_mut() {
        *z = StandardNormal.sample(rng);
    }
}

//! Seeded random streams. Every random decision in a run derives from one
//! run seed; each consumer gets its own ChaCha stream so that, for example,
//! turning DP on does not perturb client sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_WORLD: u64 = 1;
pub const STREAM_NBEST: u64 = 2;
pub const STREAM_SAMPLING: u64 = 3;
pub const STREAM_DP_NOISE: u64 = 4;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

//! Seed protocol: one ChaCha8 stream per (seed, stream id) pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for worker or replication `stream` under a master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

//! Seeded random streams. Every consumer derives its generator from the
//! run seed plus a stream index, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream index for a sub-task `j` of task `i` (e.g. sample `j` of cell `i`).
pub fn substream(i: u64, j: u64) -> u64 {
    (i << 32) ^ j
}

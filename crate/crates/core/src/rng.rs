//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `&mut impl Rng`. Independent
//! replications derive their own stream from a master seed: the seed keys a
//! ChaCha8 generator and the replication index selects the ChaCha stream, so
//! stream `i` is identical whether replications run serially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream `index` of the generator keyed by `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

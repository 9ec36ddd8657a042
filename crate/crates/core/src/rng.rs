//! Named random sub-streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Benchmark = 3,
    KMeans = 4,
}

/// Independent generator for `(seed, stream, sub)`; `sub` distinguishes
/// e.g. epochs or sections within one stream.
pub fn stream(seed: u64, which: Stream, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 48) | (sub & 0xFFFF_FFFF_FFFF));
    rng
}

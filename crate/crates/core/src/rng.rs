//! Seeded, splittable random streams.
//!
//! Every consumer draws from a ChaCha8 stream addressed by `(seed, stream)`.
//! ChaCha is counter based, so particle `i` can be generated independently of
//! particles `0..i`, which keeps parallel runs bit-identical to serial ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream namespaces. A stream id is `purpose << 40 | index`.
pub mod purpose {
    pub const NOISE: u64 = 1;
    pub const IDIOSYNCRATIC: u64 = 2;
    pub const INITIAL: u64 = 3;
    pub const PAIRS: u64 = 4;
    pub const PROJECTIONS: u64 = 5;
    pub const REFERENCE: u64 = 6;
}

pub fn stream_id(purpose: u64, index: u64) -> u64 {
    debug_assert!(index < (1 << 40));
    (purpose << 40) | index
}

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

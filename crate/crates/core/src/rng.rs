//! Seeded, counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(seed, stream id)`. ChaCha is counter-based, so the value at a given
//! position depends only on the key and the position, never on what other
//! streams were consumed before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids reserved for problem generation.
pub mod streams {
    pub const SHARED_MATRIX: u64 = 1;
    pub const COMPONENT_MATRIX: u64 = 2;
    pub const SHIFT_A: u64 = 3;
    pub const SHIFT_B: u64 = 4;
    pub const CHECKER: u64 = 5;
    /// Solver epochs use `EPOCH_BASE + epoch`.
    pub const EPOCH_BASE: u64 = 1 << 32;
    /// Offset added on regeneration retries.
    pub const RETRY_STRIDE: u64 = 1 << 16;
}

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Sampling stream for one solver epoch. The `k`-th draw of this stream is the
/// index used at inner step `k`, so indices are a pure function of
/// `(seed, epoch, step)`.
pub fn epoch_stream(seed: u64, epoch: u64) -> ChaCha8Rng {
    stream(seed, streams::EPOCH_BASE + epoch)
}

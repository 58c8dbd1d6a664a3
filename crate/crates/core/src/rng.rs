//! Reproducible random streams.
//!
//! Every random draw in the crate comes from [`ChaCha8Rng`], which is
//! portable and bit-stable across platforms. A master seed fans out into
//! independent child streams by selecting ChaCha's 64-bit stream id, so
//! run `i` of a batch always sees the same numbers no matter how the
//! batch is scheduled.

use rand::RngCore;
use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Child stream `stream` of `master`.
pub fn child_stream(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// A 64-bit seed derived from child stream `stream` of `master`.
pub fn child_seed(master: u64, stream: u64) -> u64 {
    child_stream(master, stream).next_u64()
}

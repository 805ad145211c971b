//! Seeded RNG streams.
//!
//! Every random draw in the crate goes through [`stream`], which derives an
//! independent ChaCha8 stream from a master seed and a stream index. Trial
//! `i` therefore sees the same numbers whether trials run serially or on a
//! thread pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

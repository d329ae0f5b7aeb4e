//! Seed discipline: one master seed expands into independent ChaCha streams,
//! one per purpose and index, so any stream can be recreated on its own.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Sample = 2,
    Crop = 3,
    Flip = 4,
    Phantom = 5,
    Degrade = 6,
}

/// The stream for `(purpose, index)` under `master`.
pub fn stream(master: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((purpose as u64) << 56) ^ index);
    rng
}

/// A 63-bit seed drawn from the `(purpose, index)` stream; small enough to
/// survive formats that store signed 64-bit integers.
pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    stream(master, purpose, index).next_u64() >> 1
}

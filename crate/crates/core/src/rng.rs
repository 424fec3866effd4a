//! Reproducible random streams.
//!
//! Every replica owns ChaCha8 streams keyed by `(master seed, replica, purpose)`.
//! ChaCha is counter based, so streams are independent and can be positioned
//! without generating the preceding output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for; separate purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Initial = 0,
    Dynamics = 1,
    Auxiliary = 2,
}

const PURPOSES: u64 = 4;

pub fn stream(seed: u64, replica: u64, purpose: Purpose) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica.wrapping_mul(PURPOSES).wrapping_add(purpose as u64));
    rng
}

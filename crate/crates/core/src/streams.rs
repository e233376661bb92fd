//! Reproducible random-number streams.
//!
//! Every stream is a ChaCha20 generator keyed by the user seed, with the
//! 64-bit stream id `(chain << 8) | purpose`. Distinct `(chain, purpose)`
//! pairs never share a stream, so concurrent chains are independent.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    /// Randomness consumed by Markov transitions.
    Transitions = 0,
    /// Randomised initial states.
    Initialization = 1,
    /// Anything else (tests, synthetic data).
    Auxiliary = 2,
}

pub fn stream_id(chain: u32, purpose: Purpose) -> u64 {
    (u64::from(chain) << 8) | purpose as u64
}

pub fn stream(seed: u64, chain: u32, purpose: Purpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(chain, purpose));
    rng
}

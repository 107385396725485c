//! Seed splitting.
//!
//! Every run is identified by `(master_seed, replication)`. Each purpose
//! within a run gets its own ChaCha8 stream: the generator is keyed by
//! `master_seed` and its 64-bit stream id is `replication · 16 + purpose`.
//! Streams never overlap, so runs and purposes are independent and any
//! replication can be reproduced on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Drawing the true parameters from the prior.
    Truth = 0,
    /// Covariates and reward noise.
    Environment = 1,
    /// The platform's own coins (RASC Bernoulli, action sampling).
    Algorithm = 2,
    /// Arrival-order permutations for replay.
    Permutation = 3,
}

pub fn stream(master_seed: u64, replication: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication * 16 + purpose as u64);
    rng
}

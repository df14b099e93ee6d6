//! Deterministic RNG streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream keyed by the
//! master seed and a `(purpose, id)` pair, so results never depend on the
//! order in which sites are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Synthetic case generation for one site.
    Data = 1,
    /// Initialization and batch sampling for one site's model.
    Training = 2,
    /// Pairing draws of the gossip protocol.
    Pairing = 3,
    /// The FedAvg global model.
    Central = 4,
}

/// Stream id of the FedAvg global model under [`Purpose::Central`].
pub const FEDAVG_STREAM: u32 = 1;

pub fn stream(master_seed: u64, purpose: Purpose, id: u32) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((purpose as u64) << 32) | id as u64);
    rng
}

/// A 64-bit seed drawn from a stream, for APIs that take a plain seed.
pub fn derived_seed(master_seed: u64, purpose: Purpose, id: u32) -> u64 {
    use rand::RngCore;
    stream(master_seed, purpose, id).next_u64()
}

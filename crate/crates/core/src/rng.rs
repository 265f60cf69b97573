//! Seeded random streams.
//!
//! Every consumer of randomness (network initialisation, minibatch sampling,
//! evaluation resets, ...) draws from its own ChaCha stream derived from the
//! run seed, so adding or removing one consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const ACTOR_INIT: u64 = 1;
    pub const CRITIC_INIT: u64 = 2;
    pub const PERTURBATION_INIT: u64 = 3;
    pub const MINIBATCH: u64 = 4;
    pub const EVALUATION: u64 = 5;
    pub const CVAE_INIT: u64 = 6;
    pub const CVAE_NOISE: u64 = 7;
    pub const ENV_RESET: u64 = 8;
    pub const BEHAVIOR_NOISE: u64 = 9;
    pub const EXPLORATION: u64 = 10;
    pub const PROBE: u64 = 11;
    pub const CVAE_MINIBATCH: u64 = 12;
    pub const ONLINE_MINIBATCH: u64 = 13;
    pub const MMD_BEHAVIOR: u64 = 14;
    pub const MMD_AGENT: u64 = 15;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream keyed by an additional index, e.g. the evaluation round or a sweep cell.
pub fn indexed_stream(seed: u64, stream: u64, index: u64) -> Rng {
    let mixed = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(stream);
    rng
}

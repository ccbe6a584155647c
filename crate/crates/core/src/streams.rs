//! Deterministic random streams.
//!
//! A replication stream is the ChaCha8 generator seeded by the master seed
//! with the replication index as its stream id. Streams never overlap, so
//! adding replications leaves the earlier ones untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn replication_rng(master_seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Seeded generator for auxiliary draws (graph generation, model parameters).
pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

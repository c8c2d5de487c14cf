//! Index-based seed derivation.
//!
//! Every random stream in a sweep is keyed by the master seed plus the indices
//! of the work item it belongs to, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used throughout the crate.
pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of indices into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(master: u64, path: &[u64]) -> Stream {
    stream(derive_seed(master, path))
}

/// Stable identifiers mixed into seeds so that experiments sharing a master
/// seed draw unrelated streams.
pub mod tag {
    pub const PHASE: u64 = 1;
    pub const DYNAMICS: u64 = 2;
    pub const CONVERGENCE: u64 = 3;
    pub const TASK: u64 = 4;
    pub const IPC: u64 = 5;
    pub const CONSERVED: u64 = 6;
    pub const REALIZATION: u64 = 100;
    pub const INPUT: u64 = 101;
    pub const INITIAL_A: u64 = 102;
    pub const INITIAL_B: u64 = 103;
    pub const SURROGATE: u64 = 104;
}

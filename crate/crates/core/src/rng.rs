//! Reproducible random streams.
//!
//! Every independent unit of work (one partition cell of one assembly) draws
//! from its own ChaCha8 generator. The generator is keyed by
//! `splitmix64(master_seed ^ splitmix64(context))` and the ChaCha stream id is
//! the work-unit index, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

pub const ALGORITHM: &str = "chacha8/splitmix64-keyed-streams";

/// Context tag of full-space Ulam assembly.
pub const CONTEXT_FULL: u64 = 0x46554c4c; // "FULL"

/// Context tag of mean-field component assembly for subsystem `i`.
pub fn context_component(i: usize) -> u64 {
    0x4d46_0000_0000 ^ i as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, context: u64, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(context)));
        rng.set_stream(index);
        rng
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

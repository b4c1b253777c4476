//! Hierarchical seed derivation.
//!
//! Every random draw in a run comes from a stream addressed by a path of
//! tags below the run seed, e.g. `seed / iteration / task / support / k`.
//! Streams never share state, so per-task work can run in any order or in
//! parallel and still produce identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream(u64);

/// Well-known child tags.
pub mod tag {
    pub const POLICY_INIT: u64 = 0x10;
    pub const VALUE_INIT: u64 = 0x11;
    pub const ITERATION: u64 = 0x20;
    pub const TASK: u64 = 0x21;
    pub const SUPPORT: u64 = 0x22;
    pub const QUERY: u64 = 0x23;
    pub const EVAL: u64 = 0x24;
    pub const EVAL_TRAIN: u64 = 0x25;
    pub const EVAL_TEST: u64 = 0x26;
    pub const ROLLOUT: u64 = 0x27;
    pub const BASELINE: u64 = 0x30;
    pub const META_ARM: u64 = 0x31;
    pub const BASELINE_ARM: u64 = 0x32;
    pub const RESET: u64 = 0x40;
    pub const ACTIONS: u64 = 0x41;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream(splitmix64(seed))
    }

    pub fn child(self, tag: u64) -> Self {
        RngStream(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }

    pub fn key(self) -> u64 {
        self.0
    }
}

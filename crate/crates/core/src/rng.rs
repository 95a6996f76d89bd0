// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seed derivation.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` seeded by
//! [`derive_seed`]`(base, stream, index)`. `stream` names the consumer (model
//! init, training batch, evaluation set...) and `index` distinguishes draws
//! within it (iteration number, task index...). Derived seeds are mixed with
//! SplitMix64 so neighbouring indices yield unrelated streams, and any batch
//! can be regenerated without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named seed streams.
pub mod stream {
    pub const INIT: u64 = 0x1001;
    pub const TRAIN_BATCH: u64 = 0x1002;
    pub const TRAIN_DATASET: u64 = 0x1003;
    pub const EVAL: u64 = 0x1004;
    pub const TASK_PARAMS: u64 = 0x1005;
    pub const ANALYSIS: u64 = 0x1006;
    pub const PROBE: u64 = 0x1007;
    pub const SEQUENCE: u64 = 0x1008;
}

/// One SplitMix64 output step applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    rng(derive_seed(base, stream, index))
}

//! Reproducible, splittable seeding.
//!
//! Every random stream is a ChaCha8 generator seeded with
//! `mix(parent_seed, tag)`, where `mix` is a SplitMix64 finaliser chain.
//! Replication `r` of an experiment uses `mix(master_seed, r)`, and each
//! replication splits further into named sub-streams (sites, field,
//! noise, ...). Any implementation of ChaCha8 and SplitMix64 reproduces a
//! run from the master seed and [`GENERATOR_ID`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GENERATOR_ID: &str = "chacha8-splitmix64-v1";

pub type StreamRng = ChaCha8Rng;

/// Sub-stream tags used inside one replication.
pub mod stream {
    pub const SITES: u64 = 1;
    pub const FIELD: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SITES_2: u64 = 4;
    pub const NOISE_2: u64 = 5;
    pub const FIELD_2: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `tag` from `parent`.
pub fn mix(parent: u64, tag: u64) -> u64 {
    splitmix64(parent ^ splitmix64(tag))
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for sub-stream `tag` of `parent`.
pub fn child_rng(parent: u64, tag: u64) -> StreamRng {
    rng_from_seed(mix(parent, tag))
}

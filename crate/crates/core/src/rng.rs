//! Deterministic random streams.
//!
//! Every stochastic site in the crate derives its own ChaCha stream from a
//! master seed plus a fixed salt and the indices that identify the site
//! (sequence id, iteration, trial, ...). Streams are therefore independent of
//! scheduling and worker count, which is what makes full-batch training and
//! trial fan-out bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Domain-separation salts for derived streams.
pub mod salt {
    pub const INIT: u64 = 0x1157_0a11_0c00_0001;
    pub const TRAIN_EPS: u64 = 0x7e57_0000_0000_0002;
    pub const INFER: u64 = 0xd00d_0000_0000_0003;
    pub const ROLLOUT: u64 = 0xf00f_0000_0000_0004;
    pub const DATAGEN: u64 = 0xda7a_0000_0000_0005;
    pub const TRIAL: u64 = 0x0fa1_0000_0000_0006;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with site indices into a single stream key.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &p in parts {
        acc = splitmix64(acc ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    acc
}

pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform draw in `[-bound, bound]`.
pub fn uniform_symmetric(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    rng.gen_range(-bound..=bound)
}

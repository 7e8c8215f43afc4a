//! Deterministic, splittable random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is
//! derived from a master seed plus a path of integer components (trial index,
//! particle index, time slice, ...). Streams never depend on scheduling, so
//! parallel and sequential runs produce identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream labels used when deriving sub-streams from a trial seed.
pub mod tag {
    pub const EVIDENCE: u64 = 0x4556_4944;
    pub const SAMPLER: u64 = 0x5341_4d50;
    pub const PARTICLE: u64 = 0x5041_5254;
    pub const RESAMPLE: u64 = 0x5245_5341;
    pub const TRIAL: u64 = 0x5452_4941;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and an ordered list of components.
pub fn derive_seed(seed: u64, components: &[u64]) -> u64 {
    components
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(seed: u64, components: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, components))
}

/// Seed for trial `index` of an experiment with the given master seed.
pub fn trial_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, &[tag::TRIAL, index as u64])
}

/// Stream owned by one particle during one time slice.
pub fn particle_stream(run_seed: u64, t: usize, particle: usize) -> StreamRng {
    stream(run_seed, &[tag::PARTICLE, t as u64, particle as u64])
}

/// Stream used for the population-level resampling draw at slice `t`.
pub fn resample_stream(run_seed: u64, t: usize) -> StreamRng {
    stream(run_seed, &[tag::RESAMPLE, t as u64])
}

//! Seed derivation.
//!
//! Every stochastic operation takes a plain `u64` seed. Composite procedures
//! (simulation, a Gibbs sweep, a reversible-jump move) derive one seed per
//! component from a root seed and a path of tags, so adding or reordering
//! components never perturbs the draws of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SamplerRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SamplerRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for the component addressed by `path`.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &tag| splitmix64(acc ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// Component tags used with [`derive_seed`].
pub mod tag {
    pub const SIM_FACTORS: u64 = 1;
    pub const SIM_IDIO: u64 = 2;
    pub const SWEEP: u64 = 10;
    pub const CSMC: u64 = 11;
    pub const LOADINGS: u64 = 12;
    pub const IDIO: u64 = 13;
    pub const FACTOR_GARCH: u64 = 14;
    pub const LEVERAGE: u64 = 15;
    pub const RJ: u64 = 16;
    pub const RJ_CHOICE: u64 = 20;
    pub const RJ_PROPOSAL: u64 = 21;
    pub const RJ_LIK_PROPOSED: u64 = 22;
    pub const RJ_LIK_CURRENT: u64 = 23;
    pub const RJ_ACCEPT: u64 = 24;
    pub const AUDIT: u64 = 30;
    pub const DATA: u64 = 40;
    pub const CHAIN: u64 = 41;
    pub const PRELIM: u64 = 42;
}

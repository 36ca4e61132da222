//! Seed derivation for independent deterministic RNG streams.
//!
//! Every stochastic component draws from its own `ChaCha8Rng` seeded by
//! mixing the run seed with a component salt, so e.g. clustering never
//! perturbs the training batch stream.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

pub const SALT_TRAIN: u64 = 0x01;
pub const SALT_CLUSTER: u64 = 0x02;
pub const SALT_MINE: u64 = 0x03;
pub const SALT_VALSPLIT: u64 = 0x04;
pub const SALT_INIT: u64 = 0x05;
pub const SALT_REFINE: u64 = 0x06;
pub const SALT_PROPSPLIT: u64 = 0x07;
pub const SALT_DATA: u64 = 0x08;

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a sub-seed for a (salt, index) stream of the given run seed.
pub fn sub_seed(seed: u64, salt: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt.wrapping_mul(0xA24B_AED4_963E_E407).wrapping_add(index)))
}

/// RNG for a derived stream.
pub fn stream_rng(seed: u64, salt: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, salt, index))
}

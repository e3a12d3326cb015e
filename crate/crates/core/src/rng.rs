//! Seed fan-out.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by the user
//! seed mixed with a per-subsystem domain tag, with the unit index (start,
//! chain, simulation cell) selecting the ChaCha stream. Adding chains or
//! starts never perturbs the draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_EM: u64 = 0x454d;
pub const DOMAIN_MIN_ENTROPY: u64 = 0x4d45;
pub const DOMAIN_GIBBS: u64 = 0x4753;
pub const DOMAIN_MASTER: u64 = 0x4d42;
pub const DOMAIN_REPLICATE: u64 = 0x5242;
pub const DOMAIN_POSTERIOR: u64 = 0x5053;
pub const DOMAIN_DATASET: u64 = 0x4453;

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

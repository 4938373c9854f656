//! Seed derivation.
//!
//! Every replication gets its own sub-seed from `(base_seed, rep)` via a
//! splitmix64 mix, so adding replications never changes existing ones.
//! Inside a replication each random consumer (data, verifier noise, coins,
//! orderings, calibration draws) reads its own ChaCha stream, so changing one
//! consumer leaves the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random consumers within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Data = 0,
    VerifierNoise = 1,
    Coins = 2,
    Ordering = 3,
    Calibration = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for replication `rep` of an experiment seeded with `base`.
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(base) ^ rep.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// RNG for one consumer of a replication seed.
pub fn rng_for(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

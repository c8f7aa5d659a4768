//! Deterministic seed derivation.
//!
//! Every stochastic unit (a field sample, an MC episode, a trial) gets its own
//! seed derived from the experiment seed and the unit's index, so results do
//! not depend on traversal order or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of stream labels.
pub fn derive(base: u64, labels: &[u64]) -> u64 {
    let mut h = finalize(base.wrapping_add(GOLDEN));
    for (i, &l) in labels.iter().enumerate() {
        h = finalize(h ^ finalize(l.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 2))));
    }
    h
}

/// Generator for one stochastic unit.
pub fn rng_for(base: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, labels))
}

/// Stream tags keep derived seeds of different purposes apart.
pub mod tag {
    pub const FIELD: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const TRIAL: u64 = 3;
    pub const PERTURB: u64 = 4;
    pub const NESTED: u64 = 5;
    pub const COARSE: u64 = 6;
    pub const START: u64 = 7;
}

//! Deterministic seed derivation.
//!
//! Every stochastic component draws from a ChaCha stream whose seed is
//! derived from the master seed plus a purpose tag and indices. Work can
//! therefore be parallelized or reordered without changing any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Domain tags so that different uses of the same (seed, index) never collide.
pub mod purpose {
    pub const DATA: u64 = 0x01;
    pub const TRUE_MODEL: u64 = 0x02;
    pub const TRAIN_SAMPLES: u64 = 0x03;
    pub const TEST_SAMPLES: u64 = 0x04;
    pub const FIT: u64 = 0x05;
    pub const FOLDS: u64 = 0x06;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sequence of tags/indices into a child seed.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &w in words {
        state = splitmix64(state ^ splitmix64(w));
    }
    state
}

/// ChaCha stream for a derived seed.
pub fn rng_from(master: u64, words: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, words))
}

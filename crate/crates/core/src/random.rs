//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit generator. Work that may run in
//! parallel derives its own stream from `(seed, tags...)` so results do not
//! depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type GsnRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> GsnRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A generator keyed by a seed and a path of integer tags.
pub fn derived(seed: u64, tags: &[u64]) -> GsnRng {
    let mut state = splitmix(seed ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        state = splitmix(state ^ splitmix(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    ChaCha8Rng::seed_from_u64(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

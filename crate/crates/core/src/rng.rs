//! Counter-based seed derivation.
//!
//! Every random consumer derives its own generator from a root seed and a
//! tuple of tags, so trials, tasks and batches never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Domain tags keep unrelated substreams apart even when their counters collide.
pub mod tag {
    pub const PROBLEM: u64 = 0x5052_4f42;
    pub const SAMPLES: u64 = 0x5341_4d50;
    pub const CHECK: u64 = 0x4348_4543;
    pub const MONTE_CARLO: u64 = 0x4d43_4152;
    pub const LOWER_BOUND: u64 = 0x4c42_4e44;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const PLANTED: u64 = 0x504c_4e54;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a sequence of tags into a single 64-bit seed.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(root), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn substream(root: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, tags))
}

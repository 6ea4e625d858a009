//! Seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha8 stream keyed by
//! `(master seed, purpose tag)` and an optional stream index, so results never
//! depend on the order in which independent jobs are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a purpose tag into a master seed (FNV-1a over the tag, then a
/// SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(seed ^ splitmix(h))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Stream `index` of the generator keyed by `(seed, tag)`.
pub fn substream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut rng = stream(seed, tag);
    rng.set_stream(index);
    rng
}

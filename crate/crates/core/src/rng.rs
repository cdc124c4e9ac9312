//! Counter-based random substreams.
//!
//! Every random draw in the test is taken from a stream keyed by the master
//! seed plus a path of integer tags (projection index, tree index, ...).
//! Streams do not depend on the order in which work is scheduled, so results
//! are identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keeping unrelated consumers of the master seed apart.
pub mod tag {
    pub const PERMUTATION: u64 = 0x7065_726d;
    pub const PROJECTION: u64 = 0x7072_6f6a;
    pub const FOREST: u64 = 0x666f_7273;
    pub const REPLICATE: u64 = 0x7265_706c;
    pub const SIMULATE: u64 = 0x7369_6d75;
    pub const AMPUTE: u64 = 0x616d_7075;
    pub const TEST: u64 = 0x7465_7374;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed and a tag path into a single 64-bit value.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for (depth, &t) in tags.iter().enumerate() {
        state = splitmix64(state ^ splitmix64(t ^ (depth as u64).wrapping_mul(GOLDEN)));
    }
    state
}

/// Opens the substream addressed by `(seed, tags)`.
pub fn substream(seed: u64, tags: &[u64]) -> StreamRng {
    let mut state = derive_seed(seed, tags);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

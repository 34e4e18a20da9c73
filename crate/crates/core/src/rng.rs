//! Seeded random substreams.
//!
//! One 64-bit master seed drives a ChaCha generator; each consumer draws from
//! its own stream selected by name, so adding draws in one stage never shifts
//! the values seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PLACEMENT: &str = "placement";
pub const CLOCKS: &str = "clocks";
pub const NETWORK_INIT: &str = "network-init";

/// FNV-1a, used only to turn stream names into stream ids.
fn stream_id(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

/// Derives the seed used for the `attempt`-th scenario draw under `seed`.
pub fn derive_seed(seed: u64, attempt: u64) -> u64 {
    if attempt == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed ^ attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

//! Counter-based random streams.
//!
//! Every random draw in training and evaluation comes from a stream keyed on
//! `(seed, key...)`, so a batch's negatives, dropout masks or branch samples
//! never depend on how many draws some earlier stage happened to consume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Distinguishes independent streams that share the same position keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    UserShuffle = 2,
    Negatives = 3,
    Dropout = 4,
    UserTruncation = 5,
    ItemShuffle = 6,
    ItemSubsample = 7,
    ContextCap = 8,
    EvalNegatives = 9,
    Synthetic = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the stream for `(seed, purpose, keys...)`.
pub fn keyed(seed: u64, purpose: Purpose, keys: &[u64]) -> StreamRng {
    let mut h = splitmix64(seed ^ 0x6D65_6C74_5F72_6E67);
    h = splitmix64(h ^ purpose as u64);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k));
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

//! Derivation of independent RNG streams from one master seed.

use sha2::{Digest, Sha256};

/// splitmix64 finalizer over `seed` and a numeric stream id.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream keyed by a stable text label such as `"node/7"`.
pub fn derive_labeled(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let stream = u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"));
    derive(seed, stream)
}

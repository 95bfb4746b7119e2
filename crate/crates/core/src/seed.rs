//! Stable seed derivation.
//!
//! Seeds for trials, detectors and bags are derived from a master seed by
//! hashing a textual key with FNV-1a followed by a SplitMix64 finalizer. The
//! result depends only on the inputs, never on the platform or on the order in
//! which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a key.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    let h = fnv1a(&master.to_le_bytes(), FNV_OFFSET);
    splitmix64(fnv1a(key.as_bytes(), h))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

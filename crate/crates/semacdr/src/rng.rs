//! Deterministic seed derivation and RNG construction.
//!
//! Every random draw in the pipeline comes from a ChaCha stream seeded through
//! [`derive_seed`], so results are reproducible across runs and platforms and
//! independent of batch or thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed, a purpose tag, and an index.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(base ^ fnv1a(tag.as_bytes()) ^ splitmix64(index))
}

/// Seeded stream for a given purpose.
pub fn stream(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, index))
}

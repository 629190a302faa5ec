//! Seeded random-number substreams.
//!
//! Every consumer of randomness derives its own stream from the run seed and
//! a stable name, so adding a new consumer never perturbs existing ones and
//! per-topic generation stays reproducible regardless of evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the name bytes, mixed with the seed. Stable across platforms
/// and Rust versions, unlike `DefaultHasher`.
fn mix(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in name.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the generator for the substream `name` of run seed `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, name))
}

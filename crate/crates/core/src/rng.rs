//! Seeded random streams.
//!
//! All randomness derives from a 64-bit master seed. Independent consumers
//! (bootstrap groups, synthetic pools) take a ChaCha8 stream selected by an
//! index, so the draws of consumer `i` never depend on how many other
//! consumers ran before it or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type AuditRng = ChaCha8Rng;

pub fn master(seed: u64) -> AuditRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator keyed by `seed`.
pub fn substream(seed: u64, index: u64) -> AuditRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer; turns (seed, index) into a fresh 64-bit seed for
/// APIs that take a plain seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

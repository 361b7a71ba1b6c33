//! Seeded randomness.
//!
//! Every source of randomness in the pipeline is a [`Rng`] derived from the
//! single run seed plus a module label, so that independent subsystems
//! (dataset, patches, training, evaluation) draw from independent streams
//! and a run is reproducible bit-for-bit from its seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Derives a stable sub-seed from (seed, label).
///
/// FNV-1a over the label bytes mixed with the seed, finished with a
/// splitmix64 avalanche. Stable across platforms and releases, unlike
/// `DefaultHasher`.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= seed;
    // splitmix64 finalizer
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Creates the RNG stream for a module.
pub fn stream(seed: u64, label: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, label))
}

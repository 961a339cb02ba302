//! Seed splitting. Every random consumer gets its own ChaCha stream keyed by
//! the run seed and a stable label, so adding a consumer never shifts the
//! numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// FNV-1a, fixed forever: stream ids must not change between builds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generator for the named stream of a run.
pub fn stream(seed: u64, label: &str) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label.as_bytes()));
    rng
}

/// Generator for the `index`-th member of a family of streams, e.g. one per
/// block or per episode.
pub fn indexed_stream(seed: u64, label: &str, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(label.as_bytes()) ^ index);
    rng
}

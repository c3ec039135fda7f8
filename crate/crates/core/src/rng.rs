//! Deterministic, content-addressed random streams.
//!
//! Every random draw in the toolkit comes from a generator derived from a
//! user seed plus a label path (e.g. the dim_group name or tensor name).
//! Streams therefore do not depend on iteration order or thread count, and
//! two runs with the same seed produce identical artifacts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a generator for `(seed, labels...)`.
pub fn rng_for(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update([0x1f]); // separator so ("ab","c") != ("a","bc")
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Draw `amount` distinct values from `[0, length)` and return them sorted
/// ascending. Panics if `amount > length`; callers validate widths first.
pub fn sample_sorted(rng: &mut ChaCha8Rng, length: usize, amount: usize) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, length, amount).into_vec();
    picked.sort_unstable();
    picked
}

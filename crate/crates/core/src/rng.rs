//! Counter-based hashing and per-run random streams.
//!
//! Everything that must be reproducible independently of exploration order
//! (tree arities, exponential clocks) is a pure function of a seed and a
//! vertex or edge key. Sequential uniforms for a single run come from a
//! ChaCha8 stream selected by the run index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an arbitrary sequence of words into one.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = GOLDEN;
    for &w in words {
        h = mix64(h ^ mix64(w.wrapping_add(GOLDEN)));
    }
    h
}

/// Map a hash to a uniform in the open interval (0, 1).
#[inline]
pub fn open_unit(h: u64) -> f64 {
    ((h >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Derive an independent 64-bit seed for a labelled sub-experiment.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    hash_words(&[master, tag, index])
}

/// The random stream for run `run` of an experiment seeded by `master`.
pub fn stream(master: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run);
    rng
}

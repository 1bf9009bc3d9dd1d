//! Seed derivation and Gaussian sampling helpers.
//!
//! Every stochastic component in the crate draws from a ChaCha stream keyed by
//! a mixed seed, so results are reproducible bit-for-bit regardless of worker
//! count or call order. Substreams are derived with [`mix`]: the same
//! `(base, labels...)` always yields the same stream, and distinct labels give
//! statistically independent streams.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// splitmix64 finalizer; good avalanche for seed mixing.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and a sequence of stream labels.
pub fn mix(base: u64, labels: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &l in labels {
        s = splitmix64(s ^ splitmix64(l));
    }
    s
}

/// Stable label for named streams ("init", "shuffle", ...).
pub fn label(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Deterministic RNG stream for a derived seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream keyed by `(base, name, ids...)`.
pub fn named_stream(base: u64, name: &str, ids: &[u64]) -> ChaCha8Rng {
    let mut labels = vec![label(name)];
    labels.extend_from_slice(ids);
    stream(mix(base, &labels))
}

/// n x d matrix of iid standard normal draws, row-major fill order.
pub fn normal_matrix<R: Rng>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

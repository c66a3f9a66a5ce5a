//! Seed derivation and noise sampling.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value. Child seeds are derived by hashing the parent seed together
//! with a path of integers (target index, sample index, row index, ...), so
//! results never depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Stable 64-bit tag for a string label (FNV-1a).
pub fn label_tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(seed: u64, path: &[u64]) -> StreamRng {
    stream(derive_seed(seed, path))
}

/// Draws from a zero-mean Laplace distribution with the given scale by
/// inverting its CDF.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = 0.5 - rng.sample::<f64, _>(rand::distributions::Open01);
    let mag = -(1.0 - 2.0 * u.abs()).ln();
    if u < 0.0 {
        -scale * mag
    } else {
        scale * mag
    }
}

/// `floor(fraction * n)` robust against products that land a few ulps below
/// an integer (e.g. `0.29 * 100`).
pub fn floor_fraction(fraction: f64, n: usize) -> usize {
    let v = fraction * n as f64;
    let r = v.round();
    let out = if (v - r).abs() < 1e-9 { r } else { v.floor() };
    (out.max(0.0) as usize).min(n)
}

/// `ceil(fraction * n)`, with the same tolerance as [`floor_fraction`].
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let v = fraction * n as f64;
    let r = v.round();
    let out = if (v - r).abs() < 1e-9 { r } else { v.ceil() };
    (out.max(0.0) as usize).min(n)
}

//! Truncated discrete Fourier transform used by FPA.

use std::f64::consts::PI;

use rand::Rng;

use crate::rng::laplace;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

fn twiddles(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / n as f64;
            (theta.cos(), theta.sin())
        })
        .collect()
}

/// First `l` coefficients of `X_k = sum_t x_t e^{-2 pi i k t / n}`.
pub fn dft_prefix(x: &[f64], l: usize) -> Vec<Complex> {
    let n = x.len();
    let tw = twiddles(n);
    (0..l.min(n))
        .map(|k| {
            let mut acc = Complex::default();
            for (t, &v) in x.iter().enumerate() {
                let (c, s) = tw[(k * t) % n];
                acc.re += v * c;
                acc.im -= v * s;
            }
            acc
        })
        .collect()
}

/// Real part of the length-`n` inverse DFT of `coeffs` zero-padded to `n`.
pub fn idft_real(coeffs: &[Complex], n: usize) -> Vec<f64> {
    let tw = twiddles(n);
    (0..n)
        .map(|t| {
            let sum: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    let (c, s) = tw[(k * t) % n];
                    x.re * c - x.im * s
                })
                .sum();
            sum / n as f64
        })
        .collect()
}

/// Adds independent Laplace noise of the given scale to the real and
/// imaginary part of every coefficient.
pub fn perturb_coefficients<R: Rng + ?Sized>(coeffs: &mut [Complex], scale: f64, rng: &mut R) {
    for c in coeffs {
        c.re += laplace(rng, scale);
        c.im += laplace(rng, scale);
    }
}

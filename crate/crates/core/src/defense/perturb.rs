//! Laplace perturbation of aggregates.

use serde::{Deserialize, Serialize};

use super::fourier::{dft_prefix, idft_real, perturb_coefficients};
use crate::aggregate::Series;
use crate::data::TraceMatrix;
use crate::error::{Error, Result};
use crate::rng::{derived_stream, laplace, stream};

/// Noise source for a perturbation mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Seeded(u64),
    /// Skips the random draw entirely. Only meant for tests and diagnostics.
    Disabled,
}

/// How the FPA L2 sensitivity of a ROI row is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityMode {
    /// `sqrt(T)`: one user can flip every slot of a row.
    WorstCase,
    /// Largest row norm over the population, so the noise scale does not
    /// depend on who is in the group.
    #[default]
    Empirical,
}

/// How the privacy budget is split across ROI rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budget {
    /// Each ROI row is released with the full budget.
    #[default]
    PerRow,
    /// The budget is divided evenly over all rows.
    Global,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::config("privacy budget must be positive and finite"))
    }
}

/// Adds `Laplace(1/epsilon_prime)` noise to every value below `k`, without
/// clamping. Values are visited in row-major order.
pub fn psc_noise(series: &Series, k: u32, epsilon_prime: f64, noise: Noise) -> Result<Series> {
    if k < 1 {
        return Err(Error::config("PSC threshold must be at least 1"));
    }
    check_epsilon(epsilon_prime)?;
    let mut out = series.clone();
    if let Noise::Seeded(seed) = noise {
        let mut rng = stream(seed);
        let k = f64::from(k);
        let scale = 1.0 / epsilon_prime;
        for v in out.values_mut() {
            if *v < k {
                *v += laplace(&mut rng, scale);
            }
        }
    }
    Ok(out)
}

/// Probabilistic small count suppression: noisy small counts, clamped to
/// `[0, m]` (upper bound only when the group size is known).
pub fn psc(series: &Series, k: u32, epsilon_prime: f64, noise: Noise) -> Result<Series> {
    let noisy = psc_noise(series, k, epsilon_prime, noise)?;
    let hi = series.group_size().map_or(f64::INFINITY, f64::from);
    Ok(noisy.map(|v| v.clamp(0.0, hi)))
}

/// Per-row L2 sensitivity for FPA.
pub fn fpa_sensitivity<'a, I>(mode: SensitivityMode, traces: I, n_rois: usize, n_slots: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a TraceMatrix>,
{
    match mode {
        SensitivityMode::WorstCase => vec![(n_slots as f64).sqrt(); n_rois],
        SensitivityMode::Empirical => {
            let mut best = vec![0usize; n_rois];
            let mut counts = vec![0usize; n_rois];
            for trace in traces {
                counts.fill(0);
                for t in 0..n_slots.min(trace.n_slots()) {
                    let rois = trace.slot_rois(t);
                    if rois.is_empty() {
                        counts[0] += 1;
                    }
                    for &r in rois {
                        counts[r as usize] += 1;
                    }
                }
                for (b, &c) in best.iter_mut().zip(&counts) {
                    *b = (*b).max(c);
                }
            }
            best.into_iter().map(|c| (c as f64).sqrt()).collect()
        }
    }
}

/// Laplace scale applied to each retained coefficient part.
pub fn fpa_noise_scale(l: usize, sensitivity: f64, epsilon: f64) -> f64 {
    (l as f64).sqrt() * sensitivity / epsilon
}

/// Fourier perturbation: each ROI row keeps its first `l` DFT coefficients,
/// which are perturbed and inverted back to a length-`T` real series.
pub fn fpa(series: &Series, l: usize, epsilon: f64, budget: Budget, sensitivity: &[f64], noise: Noise) -> Result<Series> {
    check_epsilon(epsilon)?;
    let n = series.n_slots();
    if l == 0 || l > n {
        return Err(Error::config(format!("FPA keeps {l} coefficients but only 1..={n} are available")));
    }
    if sensitivity.len() != series.n_rois() {
        return Err(Error::shape(series.n_rois(), sensitivity.len()));
    }
    let row_epsilon = match budget {
        Budget::PerRow => epsilon,
        Budget::Global => epsilon / series.n_rois() as f64,
    };
    let mut out = series.clone();
    for (r, &delta) in sensitivity.iter().enumerate() {
        let mut coeffs = dft_prefix(series.row(r), l);
        if let Noise::Seeded(seed) = noise {
            let scale = fpa_noise_scale(l, delta, row_epsilon);
            perturb_coefficients(&mut coeffs, scale, &mut derived_stream(seed, &[r as u64]));
        }
        out.row_mut(r).copy_from_slice(&idft_real(&coeffs, n));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn series(values: Vec<f64>, n_rois: usize, m: u32) -> Series {
        let n_slots = values.len() / n_rois;
        Series::from_values(values, n_rois, n_slots, Some(m)).unwrap()
    }

    fn variance(xs: &[f64]) -> f64 {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn psc_leaves_large_counts_and_bounds_output() {
        let mut rng = stream(1);
        let s = series((0..400).map(|_| f64::from(rng.gen_range(0..=20u32))).collect(), 4, 20);
        let out = psc(&s, 5, 0.5, Noise::Seeded(3)).unwrap();
        for (a, b) in s.values().iter().zip(out.values()) {
            if *a >= 5.0 {
                assert_eq!(a, b);
            }
            assert!((0.0..=20.0).contains(b));
        }
    }

    #[test]
    fn psc_pre_clamp_noise_variance() {
        let eps = 0.5;
        let n = 1_000_000;
        let s = series(vec![0.0; n], 1, 10);
        let noisy = psc_noise(&s, 1, eps, Noise::Seeded(11)).unwrap();
        let v = variance(noisy.values());
        let expected = 2.0 / (eps * eps);
        assert!((v - expected).abs() / expected < 0.05, "{v}");
    }

    #[test]
    fn psc_disabled_is_identity() {
        let s = series(vec![0.0, 1.0, 2.0, 9.0], 1, 9);
        assert_eq!(psc(&s, 5, 1.0, Noise::Disabled).unwrap(), s);
        assert!(psc(&s, 0, 1.0, Noise::Disabled).is_err());
        assert!(psc(&s, 1, 0.0, Noise::Disabled).is_err());
    }

    #[test]
    fn fpa_without_noise_is_low_pass() {
        let mut rng = stream(2);
        let s = series((0..48).map(|_| rng.gen_range(0.0..10.0)).collect(), 2, 10);
        let full = fpa(&s, 24, 1.0, Budget::PerRow, &[1.0, 1.0], Noise::Disabled).unwrap();
        for (a, b) in s.values().iter().zip(full.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let dc = fpa(&s, 1, 1.0, Budget::PerRow, &[1.0, 1.0], Noise::Disabled).unwrap();
        for r in 0..2 {
            let mean = s.row(r).iter().sum::<f64>() / 24.0;
            assert!(dc.row(r).iter().all(|v| (v - mean).abs() < 1e-9));
        }
    }

    #[test]
    fn fpa_coefficient_noise_variance() {
        let l = 4;
        let delta = fpa_sensitivity(SensitivityMode::WorstCase, [], 1, 16)[0];
        let eps = 1.0;
        let scale = fpa_noise_scale(l, delta, eps);
        let mut rng = stream(5);
        let mut draws = Vec::with_capacity(1_000_000);
        while draws.len() < 1_000_000 {
            let mut c = vec![super::super::fourier::Complex::default(); l];
            perturb_coefficients(&mut c, scale, &mut rng);
            for x in c {
                draws.push(x.re);
                draws.push(x.im);
            }
        }
        let expected = 128.0;
        let v = variance(&draws);
        assert!((v - expected).abs() / expected < 0.05, "{v} vs {expected}");
    }

    #[test]
    fn fpa_is_seeded_and_validated() {
        let s = series((0..24).map(f64::from).collect(), 1, 30);
        let a = fpa(&s, 4, 1.0, Budget::PerRow, &[2.0], Noise::Seeded(7)).unwrap();
        let b = fpa(&s, 4, 1.0, Budget::PerRow, &[2.0], Noise::Seeded(7)).unwrap();
        assert_eq!(a, b);
        assert!(fpa(&s, 0, 1.0, Budget::PerRow, &[2.0], Noise::Disabled).is_err());
        assert!(fpa(&s, 25, 1.0, Budget::PerRow, &[2.0], Noise::Disabled).is_err());
        assert!(fpa(&s, 4, 1.0, Budget::PerRow, &[2.0, 1.0], Noise::Disabled).is_err());
    }

    #[test]
    fn empirical_sensitivity_is_max_row_norm() {
        let a = TraceMatrix::from_pairs("a", 3, 4, [(1, 0), (1, 1), (2, 3)]).unwrap();
        let b = TraceMatrix::from_pairs("b", 3, 4, [(2, 0), (2, 1), (2, 2)]).unwrap();
        let s = fpa_sensitivity(SensitivityMode::Empirical, [&a, &b], 3, 4);
        assert_eq!(s, vec![1.0, 2f64.sqrt(), 3f64.sqrt()]);
        let w = fpa_sensitivity(SensitivityMode::WorstCase, [&a], 3, 4);
        assert_eq!(w, vec![2.0; 3]);
    }
}

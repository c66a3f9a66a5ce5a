//! Principal component analysis on standardized features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

/// Per-feature scaling applied before the covariance is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardization {
    /// Center, then divide by the sample standard deviation; features with
    /// zero variance are only centered.
    #[default]
    ZScore,
    CenterOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// `k x d`, orthonormal rows, ordered by explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Trace of the standardized covariance.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Maps reduced coordinates back into standardized feature space.
    pub fn inverse_project(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features()];
        for (c, &zj) in self.components.iter().zip(z) {
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += zj * ci;
            }
        }
        out
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits a PCA model keeping the fewest leading components whose cumulative
/// explained variance reaches `variance_target` of the total, capped at
/// `max_components`.
///
/// The covariance is decomposed directly when `d <= n`; otherwise the
/// `n x n` Gram matrix is decomposed and its eigenvectors mapped back.
pub fn fit_pca(
    features: &[Vec<f64>],
    variance_target: f64,
    max_components: usize,
    standardization: Standardization,
) -> Result<PcaModel> {
    let n = features.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::config("feature dimension must be at least 1"));
    }
    if let Some(row) = features.iter().find(|r| r.len() != d) {
        return Err(Error::shape(d, row.len()));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::config("variance target must lie in (0, 1]"));
    }

    let nf = n as f64;
    let mut means = vec![0.0; d];
    for row in features {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= nf);
    let mut scales = vec![1.0; d];
    if standardization == Standardization::ZScore {
        for (j, s) in scales.iter_mut().enumerate() {
            let var = features.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / (nf - 1.0);
            let sd = var.sqrt();
            if sd > 1e-12 * means[j].abs().max(1.0) {
                *s = sd;
            }
        }
    }
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| (v - means[j]) / scales[j]).collect())
        .collect();
    let total_variance: f64 = (0..d)
        .map(|j| x.iter().map(|r| r[j] * r[j]).sum::<f64>())
        .sum::<f64>()
        / (nf - 1.0);

    let (values, vectors) = if d <= n {
        let mut cov = vec![0.0; d * d];
        for r in &x {
            for i in 0..d {
                let ri = r[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    cov[i * d + j] += ri * r[j];
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= nf - 1.0);
        let eig = symmetric_eigen(&cov, d);
        (eig.values, eig.vectors)
    } else {
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                gram[i * n + j] = dot(&x[i], &x[j]) / (nf - 1.0);
            }
        }
        let eig = symmetric_eigen(&gram, n);
        let lambda_max = eig.values.first().copied().unwrap_or(0.0);
        let mut vectors = Vec::new();
        let mut values = Vec::new();
        for (lambda, u) in eig.values.iter().zip(&eig.vectors) {
            if *lambda <= 1e-10 * lambda_max || *lambda <= 0.0 {
                break;
            }
            let mut v = vec![0.0; d];
            for (ui, row) in u.iter().zip(&x) {
                for (vj, rj) in v.iter_mut().zip(row) {
                    *vj += ui * rj;
                }
            }
            values.push(*lambda);
            vectors.push(v);
        }
        orthonormalize(&mut vectors);
        (values, vectors)
    };

    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let usable = values
        .iter()
        .take_while(|&&v| v > 1e-10 * lambda_max && v > 0.0)
        .count();
    let goal = variance_target * total_variance * (1.0 - 1e-12);
    let mut k = 0;
    let mut acc = 0.0;
    while k < usable && k < max_components && acc < goal {
        acc += values[k];
        k += 1;
    }

    let components = vectors
        .into_iter()
        .take(k)
        .map(|mut v| {
            let (imax, _) = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 + 1e-12 { (i, x.abs()) } else { best });
            if v[imax] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(PcaModel {
        means,
        scales,
        components,
        explained_variance: values.into_iter().take(k).collect(),
        total_variance,
    })
}

/// Two passes of modified Gram-Schmidt, in order.
fn orthonormalize(vectors: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for i in 0..vectors.len() {
            let (done, rest) = vectors.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let p = dot(u, v);
                for (vj, uj) in v.iter_mut().zip(u) {
                    *vj -= p * uj;
                }
            }
            let norm = dot(v, v).sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
}

/// Projects standardized features onto the component rows.
pub fn pca_transform(model: &PcaModel, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    features
        .iter()
        .map(|row| {
            if row.len() != model.n_features() {
                return Err(Error::shape(model.n_features(), row.len()));
            }
            let z = model.standardize(row);
            Ok(model.components.iter().map(|c| dot(c, &z)).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // Box-Muller.
    fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn line_data_has_one_component() {
        let data: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let m = fit_pca(&data, 0.99, 10, Standardization::ZScore).unwrap();
        assert_eq!(m.n_components(), 1);
        let c = &m.components[0];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[0].abs() - s).abs() < 1e-10 && (c[1].abs() - s).abs() < 1e-10);
        assert!(c[0] * c[1] > 0.0);
    }

    #[test]
    fn isotropic_gaussian_has_balanced_spectrum() {
        let mut rng = crate::rng::stream(4);
        let data: Vec<Vec<f64>> = (0..10_000).map(|_| vec![normal(&mut rng), normal(&mut rng)]).collect();
        let m = fit_pca(&data, 1.0, 2, Standardization::ZScore).unwrap();
        assert_eq!(m.n_components(), 2);
        let (a, b) = (m.explained_variance[0], m.explained_variance[1]);
        assert!((a - b).abs() / a < 0.15);
    }

    #[test]
    fn transform_of_mean_is_zero_and_round_trips() {
        let mut rng = crate::rng::stream(5);
        let data: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let m = fit_pca(&data, 0.9, 6, Standardization::ZScore).unwrap();
        let z = pca_transform(&m, std::slice::from_ref(&m.means)).unwrap();
        assert!(z[0].iter().all(|v| v.abs() < 1e-12));

        // A point in the span of the kept components survives the round trip.
        let coords: Vec<f64> = (0..m.n_components()).map(|j| j as f64 - 1.5).collect();
        let std_point = m.inverse_project(&coords);
        let raw: Vec<f64> = std_point
            .iter()
            .zip(m.means.iter().zip(&m.scales))
            .map(|(v, (mu, s))| v * s + mu)
            .collect();
        let back = pca_transform(&m, &[raw]).unwrap();
        let again = m.inverse_project(&back[0]);
        for (a, b) in again.iter().zip(&std_point) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn projections_match_explicit_matrix_product() {
        let mut rng = crate::rng::stream(6);
        let data: Vec<Vec<f64>> = (0..25).map(|_| (0..5).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let m = fit_pca(&data, 1.0, 5, Standardization::ZScore).unwrap();
        let points: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let z = pca_transform(&m, &points).unwrap();
        for (p, zp) in points.iter().zip(&z) {
            for (j, c) in m.components.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..5 {
                    acc += c[i] * ((p[i] - m.means[i]) / m.scales[i]);
                }
                assert!((acc - zp[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_features_give_no_components() {
        let data = vec![vec![3.0, 5.5]; 8];
        let m = fit_pca(&data, 0.99, 10, Standardization::ZScore).unwrap();
        assert_eq!(m.n_components(), 0);
        assert_eq!(m.scales, vec![1.0, 1.0]);
        let z = pca_transform(&m, &data).unwrap();
        assert!(z.iter().all(Vec::is_empty));
    }

    #[test]
    fn gram_path_is_orthonormal_and_ordered() {
        let mut rng = crate::rng::stream(7);
        let data: Vec<Vec<f64>> = (0..15).map(|_| (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let m = fit_pca(&data, 1.0, 100, Standardization::ZScore).unwrap();
        assert_eq!(m.n_components(), 14);
        for i in 0..m.n_components() {
            for j in 0..m.n_components() {
                let p = dot(&m.components[i], &m.components[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((p - expect).abs() < 1e-8);
            }
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let sum: f64 = m.explained_variance.iter().sum();
        assert!((sum - m.total_variance).abs() < 1e-8 * m.total_variance);
    }

    #[test]
    fn cap_and_errors() {
        let mut rng = crate::rng::stream(8);
        let data: Vec<Vec<f64>> = (0..20).map(|_| (0..8).map(|_| rng.gen::<f64>()).collect()).collect();
        assert_eq!(fit_pca(&data, 1.0, 3, Standardization::ZScore).unwrap().n_components(), 3);
        assert!(fit_pca(&data[..1], 0.9, 3, Standardization::ZScore).is_err());
        let m = fit_pca(&data, 0.9, 3, Standardization::ZScore).unwrap();
        assert!(pca_transform(&m, &[vec![0.0; 7]]).is_err());
    }
}

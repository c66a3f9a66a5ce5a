//! L2-regularized logistic regression trained by full-batch gradient descent.
//!
//! The objective is
//! `J(w, b) = mean_i[softplus(z_i) - y_i z_i] + (l2 / 2) ||w||^2`
//! with `z_i = w . x_i + b`; the bias is not penalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrParams {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop once the gradient norm falls below this value.
    pub tolerance: f64,
}

impl Default for LrParams {
    fn default() -> Self {
        LrParams {
            learning_rate: 0.1,
            l2: 1.0,
            max_epochs: 2000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub converged: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn affine(w: &[f64], b: f64, x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b
}

/// Regularized mean logistic loss.
pub fn objective(weights: &[f64], bias: f64, x: &[Vec<f64>], labels: &[bool], l2: f64) -> f64 {
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(labels)
        .map(|(xi, &y)| {
            let z = affine(weights, bias, xi);
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`objective`] as `(d/dw, d/db)`.
pub fn gradient(weights: &[f64], bias: f64, x: &[Vec<f64>], labels: &[bool], l2: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (xi, &y) in x.iter().zip(labels) {
        let r = sigmoid(affine(weights, bias, xi)) - if y { 1.0 } else { 0.0 };
        gb += r;
        for (g, v) in gw.iter_mut().zip(xi) {
            *g += r * v;
        }
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

/// Upper bound on the gradient's Lipschitz constant:
/// `0.25 * lambda_max(E[x~ x~^T]) + l2`, with `x~ = [x; 1]`.
fn lipschitz(x: &[Vec<f64>], l2: f64) -> f64 {
    let k = x.first().map_or(0, Vec::len) + 1;
    let n = x.len() as f64;
    let mut m = vec![0.0; k * k];
    for xi in x {
        for i in 0..k {
            let a = if i < k - 1 { xi[i] } else { 1.0 };
            for j in 0..=i {
                let b = if j < k - 1 { xi[j] } else { 1.0 };
                m[i * k + j] += a * b / n;
            }
        }
    }
    let top = symmetric_eigen(&m, k).values.first().copied().unwrap_or(0.0);
    0.25 * top.max(0.0) + l2
}

/// Fits from zero initialization. The step is `learning_rate`, reduced to
/// `1 / L` when the loss curvature bound `L` would make it unstable.
pub fn fit_lr(x: &[Vec<f64>], labels: &[bool], params: &LrParams) -> Result<LrModel> {
    if x.len() != labels.len() {
        return Err(Error::shape(x.len(), labels.len()));
    }
    if !(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y)) {
        return Err(Error::SingleClass);
    }
    let k = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != k) {
        return Err(Error::shape(k, row.len()));
    }
    if !(params.learning_rate > 0.0 && params.l2 >= 0.0 && params.tolerance >= 0.0) {
        return Err(Error::config("learning rate must be positive, l2 and tolerance non-negative"));
    }
    let step = params.learning_rate.min(1.0 / lipschitz(x, params.l2));

    let mut w = vec![0.0; k];
    let mut b = 0.0;
    let mut epochs = 0;
    let mut converged = false;
    while epochs < params.max_epochs {
        let (gw, gb) = gradient(&w, b, x, labels, params.l2);
        let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if norm < params.tolerance {
            converged = true;
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= step * gi;
        }
        b -= step * gb;
        epochs += 1;
    }
    if !w.iter().all(|v| v.is_finite()) || !b.is_finite() {
        return Err(Error::config("logistic regression diverged"));
    }
    let final_loss = objective(&w, b, x, labels, params.l2);
    Ok(LrModel {
        weights: w,
        bias: b,
        final_loss,
        epochs,
        converged,
    })
}

/// `sigmoid(w . x + b)` for each row.
pub fn predict_scores(model: &LrModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    x.iter()
        .map(|xi| {
            if xi.len() != model.weights.len() {
                return Err(Error::shape(model.weights.len(), xi.len()));
            }
            Ok(sigmoid(affine(&model.weights, model.bias, xi)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::auc::auc;
    use rand::Rng;

    fn model(weights: Vec<f64>, bias: f64) -> LrModel {
        LrModel {
            weights,
            bias,
            final_loss: 0.0,
            epochs: 0,
            converged: true,
        }
    }

    fn clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = crate::rng::stream(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let pos = i % 2 == 0;
            let c = if pos { 2.0 } else { -2.0 };
            x.push(vec![c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            y.push(pos);
        }
        (x, y)
    }

    #[test]
    fn separable_clusters_reach_full_training_auc() {
        let (x, y) = clusters(1);
        let m = fit_lr(&x, &y, &LrParams::default()).unwrap();
        let s = predict_scores(&m, &x).unwrap();
        assert_eq!(auc(&s, &y).unwrap(), 1.0);
        assert!(m.converged);
    }

    #[test]
    fn flipped_labels_reverse_score_order() {
        let (x, y) = clusters(2);
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let a = fit_lr(&x, &y, &LrParams::default()).unwrap();
        let b = fit_lr(&x, &flipped, &LrParams::default()).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa + wb).abs() < 1e-12);
        }
        let sa = predict_scores(&a, &x).unwrap();
        let sb = predict_scores(&b, &x).unwrap();
        let mut ia: Vec<usize> = (0..x.len()).collect();
        let mut ib = ia.clone();
        ia.sort_by(|&i, &j| sa[i].total_cmp(&sa[j]));
        ib.sort_by(|&i, &j| sb[j].total_cmp(&sb[i]));
        assert_eq!(ia, ib);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::rng::stream(3);
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y: Vec<bool> = (0..30).map(|_| rng.gen()).collect();
        let h = 1e-5;
        for _ in 0..5 {
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: f64 = rng.gen_range(-1.0..1.0);
            let (gw, gb) = gradient(&w, b, &x, &y, 0.7);
            let mut numeric = Vec::new();
            for i in 0..4 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                numeric.push((objective(&wp, b, &x, &y, 0.7) - objective(&wm, b, &x, &y, 0.7)) / (2.0 * h));
            }
            numeric.push((objective(&w, b + h, &x, &y, 0.7) - objective(&w, b - h, &x, &y, 0.7)) / (2.0 * h));
            let analytic: Vec<f64> = gw.iter().copied().chain([gb]).collect();
            let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / scale <= 1e-5, "relative error {}", diff / scale);
        }
    }

    #[test]
    fn zero_model_scores_one_half() {
        let s = predict_scores(&model(vec![0.0, 0.0], 0.0), &[vec![3.0, -1.0], vec![0.0, 9.0]]).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn negated_weights_give_complementary_scores() {
        let x = vec![vec![0.3, -1.2, 2.0]];
        let w = vec![0.5, 1.5, -0.25];
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let a = predict_scores(&model(w, 0.0), &x).unwrap()[0];
        let b = predict_scores(&model(neg, 0.0), &x).unwrap()[0];
        assert!((a - (1.0 - b)).abs() < 1e-15);
    }

    #[test]
    fn batch_scores_equal_single_scores() {
        let (x, y) = clusters(4);
        let m = fit_lr(&x, &y, &LrParams::default()).unwrap();
        let batch = predict_scores(&m, &x).unwrap();
        for (xi, s) in x.iter().zip(batch) {
            assert_eq!(predict_scores(&m, std::slice::from_ref(xi)).unwrap()[0], s);
        }
    }

    #[test]
    fn single_class_and_dimension_errors() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(fit_lr(&x, &[true, true], &LrParams::default()), Err(Error::SingleClass)));
        assert!(predict_scores(&model(vec![1.0], 0.0), &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn empty_feature_vectors_fit_bias_only() {
        let x = vec![Vec::new(); 4];
        let m = fit_lr(&x, &[true, false, true, false], &LrParams::default()).unwrap();
        assert!(m.weights.is_empty());
        let s = predict_scores(&m, &x).unwrap();
        assert!(s.iter().all(|&v| v == s[0]));
    }

    #[test]
    fn large_scale_features_do_not_diverge() {
        let mut rng = crate::rng::stream(9);
        let x: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.gen_range(-300.0..300.0), rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + 100.0 * r[1] > 0.0).collect();
        let m = fit_lr(&x, &y, &LrParams::default()).unwrap();
        assert!(m.final_loss.is_finite());
        assert!(m.final_loss < std::f64::consts::LN_2);
    }
}

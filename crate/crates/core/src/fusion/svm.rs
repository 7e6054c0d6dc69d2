//! One-vs-rest linear SVM trained by dual coordinate descent.
//!
//! Each binary problem minimizes `½‖w‖² + C · mean_i max(0, 1 − y_i (w·x_i + b))`
//! on standardized inputs, with the bias folded in as a constant feature.
//! Using the mean rather than the sum of hinge losses makes the optimum
//! invariant to replicating the training set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// Stop when the spread of projected gradients falls below this.
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 1.0, tol: 1e-6, max_epochs: 20_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// One weight vector per class, over standardized inputs.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearSvm {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Fixed weights that average `blocks` consecutive `n_classes`-long score
    /// vectors: the class-`c` score is the mean of entry `c` across blocks.
    pub fn block_average(blocks: usize, n_classes: usize) -> Self {
        let dim = blocks * n_classes;
        let weights = (0..n_classes)
            .map(|c| {
                let mut w = vec![0.0; dim];
                for b in 0..blocks {
                    w[b * n_classes + c] = 1.0 / blocks as f64;
                }
                w
            })
            .collect();
        LinearSvm { mean: vec![0.0; dim], std: vec![1.0; dim], weights, bias: vec![0.0; n_classes] }
    }

    pub fn decision(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Fusion(format!("svm expects {} inputs, got {}", self.dim(), x.len())));
        }
        let z: Vec<f64> = x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect();
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::nn::argmax(&self.decision(x)?))
    }

    /// Squared-norm of the weights restricted to `range`, summed over classes.
    pub fn block_norm(&self, range: std::ops::Range<usize>) -> f64 {
        self.weights.iter().map(|w| w[range.clone()].iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}

pub fn train_ovr(features: &[Vec<f64>], labels: &[usize], n_classes: usize, params: &SvmParams) -> Result<LinearSvm> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Fusion("svm training needs one label per nonempty record".into()));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Fusion("svm training records have inconsistent dimensionality".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Fusion(format!("label {bad} outside {n_classes} classes")));
    }
    let mut present = vec![false; n_classes];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::Fusion("svm training needs at least two distinct classes".into()));
    }
    if !(params.c > 0.0) {
        return Err(Error::Fusion("svm regularization constant must be positive".into()));
    }

    let n = features.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|j| {
            let var = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    // standardized inputs with a trailing constant for the bias
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let mut z: Vec<f64> = f.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect();
            z.push(1.0);
            z
        })
        .collect();

    let mut weights = Vec::with_capacity(n_classes);
    let mut bias = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let ys: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
        let w = dual_cd(&xs, &ys, params.c / n, params, class as u64);
        bias.push(w[dim]);
        weights.push(w[..dim].to_vec());
    }
    Ok(LinearSvm { mean, std, weights, bias })
}

fn dual_cd(xs: &[Vec<f64>], ys: &[f64], upper: f64, params: &SvmParams, stream: u64) -> Vec<f64> {
    let dim = xs[0].len();
    let mut w = vec![0.0; dim];
    let mut alpha = vec![0.0; xs.len()];
    let q: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream);
    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let x = &xs[i];
            let g = ys[i] * x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-14 && q[i] > 0.0 {
                let new = (alpha[i] - g / q[i]).clamp(0.0, upper);
                let delta = (new - alpha[i]) * ys[i];
                alpha[i] = new;
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += delta * xj;
                }
            }
        }
        if pg_max - pg_min < params.tol {
            break;
        }
    }
    w
}

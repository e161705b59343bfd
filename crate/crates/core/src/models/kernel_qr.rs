//! Kernel quantile regression (the SVR-style forecaster).
//!
//! For each level `tau` the model is `f(x) = sum_j alpha_j K(x_j, x) + b`
//! with a Gaussian kernel centred on the training rows. Coefficients are
//! fitted by full-batch gradient descent on
//!
//! ```text
//! (1/n) sum_i rho_tau(y_i - f(x_i)) + lambda * ||f||^2
//! ```
//!
//! where `rho_tau` is the Huber-smoothed pinball loss. Internally the
//! coefficients are optimised as `beta = n * alpha` so that the parameter
//! scale does not depend on the number of centres.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{smoothed_pinball, smoothed_pinball_derivative, DEFAULT_SMOOTHING};
use super::optim::Adam;
use super::{
    ModelError, ModelParams, ModelPayload, QuantileForecaster, QuantileLevels, TrainingData,
};
use crate::features::FeatureMatrix;
use crate::stats::{empirical_quantile, quantile_sorted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelQrParams {
    pub lambda: f64,
    /// Gaussian kernel width; `None` uses the median pairwise distance.
    pub bandwidth: Option<f64>,
    pub epochs: usize,
    pub step: f64,
    pub seed: u64,
    /// Training rows above this count are subsampled with `seed`.
    pub max_rows: usize,
}

impl Default for KernelQrParams {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            bandwidth: None,
            epochs: 500,
            step: 0.05,
            seed: 0,
            max_rows: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelQrModel {
    pub bandwidth: f64,
    /// Row-major kernel centres (`alpha[level].len()` rows).
    pub centers: Vec<f64>,
    pub n_features: usize,
    /// Per-level coefficient vectors.
    pub alpha: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

impl KernelQrModel {
    pub(crate) fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.intercept);
        let k = self.n_features;
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        for (j, c) in self.centers.chunks_exact(k.max(1)).enumerate() {
            let d2: f64 = if k == 0 {
                0.0
            } else {
                c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            let kv = (-d2 * inv).exp();
            for (o, a) in out.iter_mut().zip(&self.alpha) {
                *o += a[j] * kv;
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance, falling back to 1 when degenerate.
pub fn median_bandwidth(rows: &[f64], k: usize) -> f64 {
    let n = if k == 0 { 0 } else { rows.len() / k };
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(&rows[i * k..(i + 1) * k], &rows[j * k..(j + 1) * k]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let med = quantile_sorted(&d, 0.5);
    if med > 0.0 {
        return med;
    }
    let positive: Vec<f64> = d.into_iter().filter(|v| *v > 0.0).collect();
    if positive.is_empty() {
        1.0
    } else {
        positive.iter().sum::<f64>() / positive.len() as f64
    }
}

pub fn gram_matrix(rows: &[f64], k: usize, bandwidth: f64) -> Vec<f64> {
    let n = if k == 0 { rows.len() } else { rows.len() / k };
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut g = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = (-sq_dist(&rows[i * k..(i + 1) * k], &rows[j * k..(j + 1) * k]) * inv).exp();
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Smoothed objective for one level, exposed for gradient checking.
///
/// Parameters are laid out as `[beta_1, ..., beta_n, b]`.
pub struct KernelQrProblem<'a> {
    gram: &'a [f64],
    y: &'a [f64],
    weights: Vec<f64>,
    tau: f64,
    lambda: f64,
    delta: f64,
}

impl<'a> KernelQrProblem<'a> {
    pub fn new(gram: &'a [f64], y: &'a [f64], tau: f64, lambda: f64) -> Self {
        let w = 1.0 / y.len() as f64;
        Self::with_weights(gram, y, vec![w; y.len()], tau, lambda)
    }

    /// Per-row weights replace the uniform `1/n` of the data term.
    pub fn with_weights(
        gram: &'a [f64],
        y: &'a [f64],
        weights: Vec<f64>,
        tau: f64,
        lambda: f64,
    ) -> Self {
        assert_eq!(gram.len(), y.len() * y.len());
        assert_eq!(weights.len(), y.len());
        Self {
            gram,
            y,
            weights,
            tau,
            lambda,
            delta: DEFAULT_SMOOTHING,
        }
    }

    pub fn dim(&self) -> usize {
        self.y.len() + 1
    }

    fn kv(&self, v: &[f64], out: &mut [f64]) {
        let n = self.y.len();
        for i in 0..n {
            out[i] = self.gram[i * n..(i + 1) * n]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    /// Objective value; also fills `kb` with `K beta`.
    fn objective_with(&self, theta: &[f64], kb: &mut [f64]) -> f64 {
        let n = self.y.len();
        let nf = n as f64;
        let (beta, b) = (&theta[..n], theta[n]);
        self.kv(beta, kb);
        let data: f64 = (0..n)
            .map(|i| {
                self.weights[i]
                    * smoothed_pinball(self.y[i] - (kb[i] / nf + b), self.tau, self.delta)
            })
            .sum();
        let reg: f64 = beta.iter().zip(kb.iter()).map(|(a, c)| a * c).sum::<f64>() / (nf * nf);
        data + self.lambda * reg
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        let mut kb = vec![0.0; self.y.len()];
        self.objective_with(theta, &mut kb)
    }

    /// Objective and its analytic gradient.
    pub fn objective_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.y.len();
        let nf = n as f64;
        let mut kb = vec![0.0; n];
        let loss = self.objective_with(theta, &mut kb);
        let b = theta[n];
        let mut w = vec![0.0; n];
        let mut gb = 0.0;
        for i in 0..n {
            let psi = self.weights[i]
                * smoothed_pinball_derivative(self.y[i] - (kb[i] / nf + b), self.tau, self.delta);
            w[i] = -psi / nf + 2.0 * self.lambda * theta[i] / (nf * nf);
            gb -= psi;
        }
        self.kv(&w, &mut grad[..n]);
        grad[n] = gb;
        loss
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.objective_and_gradient(theta, &mut g);
        g
    }
}

/// Merge rows with identical features and target into one weighted centre.
/// Unique rows come out in lexicographic order; weights are `count / n`.
fn collapse_duplicates(data: &TrainingData) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = data.n();
    let key = |i: usize| {
        data.row(i)
            .iter()
            .copied()
            .chain(std::iter::once(data.y[i]))
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        key(a)
            .zip(key(b))
            .map(|(u, v)| u.total_cmp(&v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let (mut centers, mut targets, mut counts) = (Vec::new(), Vec::new(), Vec::<usize>::new());
    let mut prev: Option<usize> = None;
    for i in order {
        if prev.is_some_and(|p| key(p).zip(key(i)).all(|(u, v)| u.to_bits() == v.to_bits())) {
            *counts.last_mut().expect("previous group") += 1;
        } else {
            centers.extend_from_slice(data.row(i));
            targets.push(data.y[i]);
            counts.push(1);
        }
        prev = Some(i);
    }
    let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
    (centers, targets, weights)
}

pub fn train_kernel_qr(
    matrix: &FeatureMatrix,
    levels: &QuantileLevels,
    params: &KernelQrParams,
) -> Result<QuantileForecaster, ModelError> {
    if !(params.lambda >= 0.0)
        || !(params.step > 0.0)
        || params.bandwidth.is_some_and(|h| !(h > 0.0))
    {
        return Err(ModelError::InvalidParams(
            "kernel QR needs lambda >= 0, step > 0 and a positive bandwidth".into(),
        ));
    }
    let data = TrainingData::from_matrix(matrix, Some(params.max_rows), params.seed)?;
    let bandwidth = params
        .bandwidth
        .unwrap_or_else(|| median_bandwidth(&data.x, data.k));
    let (centers, targets, weights) = collapse_duplicates(&data);
    let gram = gram_matrix(&centers, data.k, bandwidth);
    let n = targets.len();

    let fitted: Vec<(Vec<f64>, f64)> = levels
        .as_slice()
        .par_iter()
        .map(|&tau| {
            let problem =
                KernelQrProblem::with_weights(&gram, &targets, weights.clone(), tau, params.lambda);
            let mut theta = vec![0.0; n + 1];
            theta[n] = empirical_quantile(&data.y, tau);
            let mut grad = vec![0.0; n + 1];
            let mut adam = Adam::new(n + 1, params.step, params.epochs);
            for epoch in 0..params.epochs {
                let loss = problem.objective_and_gradient(&theta, &mut grad);
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch, level: tau });
                }
                adam.update(&mut theta, &grad);
            }
            let b = theta[n];
            theta.truncate(n);
            let alpha = theta.into_iter().map(|beta| beta / n as f64).collect();
            Ok((alpha, b))
        })
        .collect::<Result<_, _>>()?;

    let (alpha, intercept) = fitted.into_iter().unzip();
    let model = KernelQrModel {
        bandwidth,
        centers,
        n_features: data.k,
        alpha,
        intercept,
    };
    Ok(QuantileForecaster::assemble(
        matrix.feature_names.clone(),
        levels.clone(),
        ModelParams::Svr(params.clone()),
        ModelPayload::Svr(model),
    ))
}

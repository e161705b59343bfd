//! Monotone composite quantile regression network.
//!
//! A single hidden-layer network receives the feature vector plus the
//! quantile level `tau` as an extra input:
//!
//! ```text
//! f(x, tau) = sum_h exp(u_h) * tanh(W_h . x + exp(v_h) * tau + c_h) + b
//! ```
//!
//! Every weight on a path from `tau` to the output is an exponential, hence
//! positive, and `tanh` is non-decreasing, so `f` is non-decreasing in `tau`
//! for every `x`. All levels are fitted jointly on the mean smoothed pinball
//! loss over rows and levels.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{smoothed_pinball, smoothed_pinball_derivative, DEFAULT_SMOOTHING};
use super::optim::Adam;
use super::{
    ModelError, ModelParams, ModelPayload, QuantileForecaster, QuantileLevels, TrainingData,
};
use crate::features::FeatureMatrix;
use crate::stats::{empirical_quantile, seeded_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MqnnParams {
    pub hidden_units: usize,
    pub epochs: usize,
    pub step: f64,
    pub seed: u64,
    /// Optional cap on training rows (seeded subsample).
    pub max_rows: Option<usize>,
}

impl Default for MqnnParams {
    fn default() -> Self {
        Self {
            hidden_units: 16,
            epochs: 2000,
            step: 0.02,
            seed: 0,
            max_rows: None,
        }
    }
}

/// Network weights. `tau_raw` and `output_raw` are log-weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqnnModel {
    pub hidden: usize,
    pub n_features: usize,
    /// `hidden x n_features`, row-major.
    pub input_weights: Vec<f64>,
    pub tau_raw: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output_raw: Vec<f64>,
    pub output_bias: f64,
}

impl MqnnModel {
    fn dim(hidden: usize, k: usize) -> usize {
        hidden * (k + 3) + 1
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(Self::dim(self.hidden, self.n_features));
        t.extend(&self.input_weights);
        t.extend(&self.tau_raw);
        t.extend(&self.hidden_bias);
        t.extend(&self.output_raw);
        t.push(self.output_bias);
        t
    }

    fn from_flat(hidden: usize, k: usize, t: &[f64]) -> Self {
        let hk = hidden * k;
        Self {
            hidden,
            n_features: k,
            input_weights: t[..hk].to_vec(),
            tau_raw: t[hk..hk + hidden].to_vec(),
            hidden_bias: t[hk + hidden..hk + 2 * hidden].to_vec(),
            output_raw: t[hk + 2 * hidden..hk + 3 * hidden].to_vec(),
            output_bias: t[hk + 3 * hidden],
        }
    }

    pub(crate) fn predict_into(&self, x: &[f64], levels: &[f64], out: &mut [f64]) {
        let h = self.hidden;
        let k = self.n_features;
        let mut pre = vec![0.0; h];
        let mut tau_w = vec![0.0; h];
        let mut out_w = vec![0.0; h];
        for j in 0..h {
            pre[j] = self.hidden_bias[j]
                + self.input_weights[j * k..(j + 1) * k]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>();
            tau_w[j] = self.tau_raw[j].exp();
            out_w[j] = self.output_raw[j].exp();
        }
        for (o, &tau) in out.iter_mut().zip(levels) {
            let mut acc = self.output_bias;
            for j in 0..h {
                acc += out_w[j] * (pre[j] + tau_w[j] * tau).tanh();
            }
            *o = acc;
        }
    }
}

/// Build a forecaster from explicit weights.
pub fn mqnn_from_weights(
    feature_names: Vec<String>,
    levels: QuantileLevels,
    weights: MqnnModel,
) -> Result<QuantileForecaster, ModelError> {
    let (h, k) = (weights.hidden, weights.n_features);
    if k != feature_names.len()
        || weights.input_weights.len() != h * k
        || [&weights.tau_raw, &weights.hidden_bias, &weights.output_raw]
            .iter()
            .any(|v| v.len() != h)
    {
        return Err(ModelError::InvalidParams(
            "inconsistent MQNN weight shapes".into(),
        ));
    }
    let params = MqnnParams {
        hidden_units: h,
        ..Default::default()
    };
    Ok(QuantileForecaster::assemble(
        feature_names,
        levels,
        ModelParams::Mqnn(params),
        ModelPayload::Mqnn(weights),
    ))
}

/// Composite smoothed-pinball objective, exposed for gradient checking.
///
/// Parameter layout: input weights (`hidden x k`), tau log-weights, hidden
/// biases, output log-weights, output bias.
pub struct MqnnProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    k: usize,
    levels: &'a [f64],
    hidden: usize,
    delta: f64,
}

impl<'a> MqnnProblem<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64], k: usize, levels: &'a [f64], hidden: usize) -> Self {
        assert_eq!(x.len(), y.len() * k);
        Self {
            x,
            y,
            k,
            levels,
            hidden,
            delta: DEFAULT_SMOOTHING,
        }
    }

    pub fn dim(&self) -> usize {
        MqnnModel::dim(self.hidden, self.k)
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, None)
    }

    pub fn objective_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(theta, Some(grad))
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.evaluate(theta, Some(&mut g));
        g
    }

    fn evaluate(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (h, k) = (self.hidden, self.k);
        let hk = h * k;
        let (w, rest) = theta.split_at(hk);
        let (v, rest) = rest.split_at(h);
        let (c, rest) = rest.split_at(h);
        let (u, rest) = rest.split_at(h);
        let b = rest[0];
        let tau_w: Vec<f64> = v.iter().map(|a| a.exp()).collect();
        let out_w: Vec<f64> = u.iter().map(|a| a.exp()).collect();
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        let n = self.y.len();
        let scale = 1.0 / (n * self.levels.len()) as f64;
        let mut loss = 0.0;
        let mut pre = vec![0.0; h];
        let mut z = vec![0.0; h];
        let mut da_row = vec![0.0; h];
        for i in 0..n {
            let xi = &self.x[i * k..(i + 1) * k];
            for j in 0..h {
                pre[j] = c[j]
                    + w[j * k..(j + 1) * k]
                        .iter()
                        .zip(xi)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
            da_row.iter_mut().for_each(|d| *d = 0.0);
            for &tau in self.levels {
                let mut out = b;
                for j in 0..h {
                    z[j] = (pre[j] + tau_w[j] * tau).tanh();
                    out += out_w[j] * z[j];
                }
                let r = self.y[i] - out;
                loss += smoothed_pinball(r, tau, self.delta);
                if let Some(g) = grad.as_deref_mut() {
                    let dout = -smoothed_pinball_derivative(r, tau, self.delta) * scale;
                    for j in 0..h {
                        g[hk + 2 * h + j] += dout * out_w[j] * z[j];
                        let da = dout * out_w[j] * (1.0 - z[j] * z[j]);
                        g[hk + j] += da * tau_w[j] * tau;
                        g[hk + h + j] += da;
                        da_row[j] += da;
                    }
                    g[hk + 3 * h] += dout;
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..h {
                    for f in 0..k {
                        g[j * k + f] += da_row[j] * xi[f];
                    }
                }
            }
        }
        loss * scale
    }
}

pub fn train_mqnn(
    matrix: &FeatureMatrix,
    levels: &QuantileLevels,
    params: &MqnnParams,
) -> Result<QuantileForecaster, ModelError> {
    if params.hidden_units == 0 || !(params.step > 0.0) {
        return Err(ModelError::InvalidParams(
            "MQNN needs hidden_units >= 1 and step > 0".into(),
        ));
    }
    let data = TrainingData::from_matrix(matrix, params.max_rows, params.seed)?;
    let (h, k) = (params.hidden_units, data.k);
    let problem = MqnnProblem::new(&data.x, &data.y, k, levels.as_slice(), h);

    let mut rng = seeded_rng(params.seed);
    let w_init = Normal::new(0.0, 1.0 / ((k + 1) as f64).sqrt()).expect("valid sd");
    let small = Normal::new(0.0, 0.1).expect("valid sd");
    let init = MqnnModel {
        hidden: h,
        n_features: k,
        input_weights: (0..h * k).map(|_| w_init.sample(&mut rng)).collect(),
        tau_raw: (0..h).map(|_| small.sample(&mut rng)).collect(),
        hidden_bias: (0..h).map(|_| w_init.sample(&mut rng)).collect(),
        output_raw: (0..h)
            .map(|_| (0.1f64).ln() + small.sample(&mut rng))
            .collect(),
        output_bias: empirical_quantile(&data.y, 0.5),
    };

    let mut theta = init.to_flat();
    let mut grad = vec![0.0; theta.len()];
    let mut adam = Adam::new(theta.len(), params.step, params.epochs);
    for epoch in 0..params.epochs {
        let loss = problem.objective_and_gradient(&theta, &mut grad);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                epoch,
                level: f64::NAN,
            });
        }
        adam.update(&mut theta, &grad);
    }
    let model = MqnnModel::from_flat(h, k, &theta);
    Ok(QuantileForecaster::assemble(
        matrix.feature_names.clone(),
        levels.clone(),
        ModelParams::Mqnn(params.clone()),
        ModelPayload::Mqnn(model),
    ))
}

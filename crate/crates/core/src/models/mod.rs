//! Quantile forecasters and ECDF assembly.
//!
//! Three trainers share one prediction interface: gradient-boosted quantile
//! trees ([`gbrt`]), kernel quantile regression ([`kernel_qr`], the SVR-style
//! model) and a monotone composite quantile network ([`mqnn`]). A trained
//! [`QuantileForecaster`] maps a feature vector to one estimate per quantile
//! level; [`predict_ecdf`] turns those estimates into a non-crossing
//! [`EcdfForecast`].

pub mod gbrt;
pub mod kernel_qr;
pub mod loss;
pub mod mqnn;
mod optim;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::stats::seeded_rng;

pub use gbrt::{train_gbrt, GbrtModel, GbrtParams};
pub use kernel_qr::{train_kernel_qr, KernelQrModel, KernelQrParams};
pub use mqnn::{train_mqnn, MqnnModel, MqnnParams};

/// Format tag written into every serialized model.
pub const MODEL_FORMAT: &str = "pfsa-model/1";

/// Upper clamp for normalized power forecasts (5% headroom).
pub const POWER_CEILING: f64 = 1.05;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training matrix has no rows")]
    EmptyMatrix,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("invalid quantile levels: {0}")]
    InvalidLevels(String),
    #[error("loss became non-finite at epoch {epoch} (level {level})")]
    NonFiniteLoss { epoch: usize, level: f64 },
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported model format {0:?}")]
    UnknownFormat(String),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Strictly increasing probabilities in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileLevels(Vec<f64>);

impl QuantileLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self, ModelError> {
        if levels.is_empty() {
            return Err(ModelError::InvalidLevels("no levels".into()));
        }
        if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(ModelError::InvalidLevels(format!("{l} outside (0, 1)")));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidLevels("not strictly increasing".into()));
        }
        Ok(Self(levels))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for QuantileLevels {
    /// 0.1, 0.2, ..., 0.9.
    fn default() -> Self {
        Self((1..=9).map(|i| i as f64 / 10.0).collect())
    }
}

impl TryFrom<Vec<f64>> for QuantileLevels {
    type Error = ModelError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<QuantileLevels> for Vec<f64> {
    fn from(l: QuantileLevels) -> Self {
        l.0
    }
}

/// Quantile estimates at fixed levels, linearly interpolated between knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfForecast {
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
}

impl EcdfForecast {
    pub fn is_non_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    /// Quantile at probability `p`, interpolating between knots and holding
    /// the end values flat outside the knot range.
    pub fn quantile(&self, p: f64) -> f64 {
        let (l, v) = (&self.levels, &self.values);
        if p <= l[0] {
            return v[0];
        }
        if p >= l[l.len() - 1] {
            return v[v.len() - 1];
        }
        let j = l.partition_point(|x| *x <= p);
        let w = (p - l[j - 1]) / (l[j] - l[j - 1]);
        v[j - 1] + w * (v[j] - v[j - 1])
    }

    /// Cumulative probability at `y` on the interpolated ECDF, clamped to the
    /// outer levels.
    pub fn cdf(&self, y: f64) -> f64 {
        let (l, v) = (&self.levels, &self.values);
        if y < v[0] {
            return l[0];
        }
        if y >= v[v.len() - 1] {
            return l[l.len() - 1];
        }
        let j = v.partition_point(|x| *x <= y);
        if v[j] == v[j - 1] {
            return l[j];
        }
        let w = (y - v[j - 1]) / (v[j] - v[j - 1]);
        l[j - 1] + w * (l[j] - l[j - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gbrt,
    Svr,
    Mqnn,
}

impl ModelKind {
    /// Display order used by reports.
    pub const ALL: [ModelKind; 3] = [ModelKind::Gbrt, ModelKind::Mqnn, ModelKind::Svr];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gbrt => "GBRT",
            ModelKind::Svr => "SVR",
            ModelKind::Mqnn => "MQRNN",
        }
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            ModelKind::Gbrt => "gbrt",
            ModelKind::Svr => "svr",
            ModelKind::Mqnn => "mqnn",
        }
    }

    /// Whether per-level outputs can cross and need rearrangement.
    pub fn may_cross(self) -> bool {
        !matches!(self, ModelKind::Mqnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gbrt" => Ok(ModelKind::Gbrt),
            "svr" | "kqr" => Ok(ModelKind::Svr),
            "mqnn" | "mqrnn" | "mcqrnn" => Ok(ModelKind::Mqnn),
            other => Err(format!(
                "unknown model {other:?} (expected gbrt, svr or mqnn)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelParams {
    Gbrt(GbrtParams),
    Svr(KernelQrParams),
    Mqnn(MqnnParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Gbrt(_) => ModelKind::Gbrt,
            ModelParams::Svr(_) => ModelKind::Svr,
            ModelParams::Mqnn(_) => ModelKind::Mqnn,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelParams::Gbrt(p) => p.seed,
            ModelParams::Svr(p) => p.seed,
            ModelParams::Mqnn(p) => p.seed,
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Gbrt => ModelParams::Gbrt(GbrtParams::default()),
            ModelKind::Svr => ModelParams::Svr(KernelQrParams::default()),
            ModelKind::Mqnn => ModelParams::Mqnn(MqnnParams::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPayload {
    Gbrt(GbrtModel),
    Svr(KernelQrModel),
    Mqnn(MqnnModel),
}

/// A trained model. Immutable; safe to share across threads for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecaster {
    pub format: String,
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub levels: QuantileLevels,
    pub params: ModelParams,
    pub seed: u64,
    pub payload: ModelPayload,
}

impl QuantileForecaster {
    pub(crate) fn assemble(
        feature_names: Vec<String>,
        levels: QuantileLevels,
        params: ModelParams,
        payload: ModelPayload,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            kind: params.kind(),
            feature_names,
            levels,
            seed: params.seed(),
            params,
            payload,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Per-level estimates before rearrangement and clamping.
    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; self.levels.len()];
        self.predict_raw_into(x, &mut out)?;
        Ok(out)
    }

    pub fn predict_raw_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        if x.len() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        let levels = self.levels.as_slice();
        match &self.payload {
            ModelPayload::Gbrt(m) => m.predict_into(x, out),
            ModelPayload::Svr(m) => m.predict_into(x, out),
            ModelPayload::Mqnn(m) => m.predict_into(x, levels, out),
        }
        Ok(())
    }

    /// Rearranged, clamped per-level values written into `out`.
    pub fn predict_values_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        self.predict_raw_into(x, out)?;
        finish_ecdf_values(out, self.kind.may_cross());
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let model: Self = serde_json::from_str(s)?;
        if model.format != MODEL_FORMAT {
            return Err(ModelError::UnknownFormat(model.format));
        }
        Ok(model)
    }
}

/// Sort (when `rearrange`) and clamp to `[0, POWER_CEILING]`.
pub fn finish_ecdf_values(values: &mut [f64], rearrange: bool) {
    if rearrange {
        values.sort_by(f64::total_cmp);
    }
    for v in values.iter_mut() {
        *v = v.clamp(0.0, POWER_CEILING);
    }
}

/// Evaluate every level and assemble a non-crossing ECDF.
///
/// GBRT and SVR outputs are rearranged (sorted); MQRNN outputs are
/// monotone by construction and pass through unchanged.
pub fn predict_ecdf(model: &QuantileForecaster, x: &[f64]) -> Result<EcdfForecast, ModelError> {
    predict_ecdf_with(model, x, model.kind.may_cross())
}

/// [`predict_ecdf`] with explicit control over rearrangement.
pub fn predict_ecdf_with(
    model: &QuantileForecaster,
    x: &[f64],
    rearrange: bool,
) -> Result<EcdfForecast, ModelError> {
    let mut values = model.predict_raw(x)?;
    finish_ecdf_values(&mut values, rearrange);
    Ok(EcdfForecast {
        levels: model.levels.as_slice().to_vec(),
        values,
    })
}

/// Train the model selected by `params`.
pub fn train_model(
    matrix: &FeatureMatrix,
    levels: &QuantileLevels,
    params: &ModelParams,
) -> Result<QuantileForecaster, ModelError> {
    match params {
        ModelParams::Gbrt(p) => train_gbrt(matrix, levels, p),
        ModelParams::Svr(p) => train_kernel_qr(matrix, levels, p),
        ModelParams::Mqnn(p) => train_mqnn(matrix, levels, p),
    }
}

/// Canonically ordered (by timestamp) training rows, optionally subsampled.
pub(crate) struct TrainingData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub k: usize,
}

impl TrainingData {
    pub fn from_matrix(
        matrix: &FeatureMatrix,
        max_rows: Option<usize>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if matrix.n_rows() == 0 {
            return Err(ModelError::EmptyMatrix);
        }
        let mut order = matrix.canonical_order();
        if let Some(cap) = max_rows {
            if cap == 0 {
                return Err(ModelError::InvalidParams(
                    "max_rows must be positive".into(),
                ));
            }
            if order.len() > cap {
                let mut rng = seeded_rng(seed);
                let mut picked: Vec<usize> = (0..order.len()).collect();
                picked.shuffle(&mut rng);
                picked.truncate(cap);
                picked.sort_unstable();
                order = picked.into_iter().map(|p| order[p]).collect();
            }
        }
        let k = matrix.n_features();
        let mut x = Vec::with_capacity(order.len() * k);
        for &i in &order {
            x.extend_from_slice(matrix.row(i));
        }
        let y = order.iter().map(|&i| matrix.target[i]).collect();
        Ok(Self { x, y, k })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_levels() {
        let l = QuantileLevels::default();
        assert_eq!(l.len(), 9);
        assert_eq!(l.as_slice()[0], 0.1);
        assert_eq!(l.as_slice()[2], 0.3);
        assert_eq!(l.as_slice()[8], 0.9);
        assert!(QuantileLevels::new(vec![0.5, 0.4]).is_err());
        assert!(QuantileLevels::new(vec![0.0, 0.4]).is_err());
        assert!(serde_json::from_str::<QuantileLevels>("[0.2, 0.2]").is_err());
    }

    #[test]
    fn rearrangement_sorts() {
        let mut v = [0.3, 0.2, 0.4];
        finish_ecdf_values(&mut v, true);
        assert_eq!(v, [0.2, 0.3, 0.4]);
        let mut v = [-0.1, 0.5, 2.0];
        finish_ecdf_values(&mut v, false);
        assert_eq!(v, [0.0, 0.5, POWER_CEILING]);
    }

    #[test]
    fn ecdf_interpolation() {
        let f = EcdfForecast {
            levels: vec![0.1, 0.5, 0.9],
            values: vec![0.0, 0.4, 0.8],
        };
        assert!((f.quantile(0.3) - 0.2).abs() < 1e-12);
        assert_eq!(f.quantile(0.05), 0.0);
        assert!((f.cdf(0.6) - 0.7).abs() < 1e-12);
        assert_eq!(f.cdf(1.0), 0.9);
    }

    #[test]
    fn kind_names() {
        assert_eq!("mqnn".parse::<ModelKind>().unwrap(), ModelKind::Mqnn);
        assert_eq!(ModelKind::Svr.label(), "SVR");
        assert!("forest".parse::<ModelKind>().is_err());
    }
}

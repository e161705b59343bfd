//! Filter rankings and wrapper-based forward selection.
//!
//! Two filters (Fisher score and mRMR) each contribute their top ten
//! features to a candidate pool. Sequential forward selection then grows a
//! feature set from that pool, scoring every candidate subset with a
//! validation CRPS supplied by a [`SubsetEvaluator`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::models::gbrt::{train_gbrt, GbrtParams};
use crate::models::{ModelError, QuantileLevels};
use crate::scoring::crps_ecdf;
use crate::stats::{equal_frequency_bins, mean, mutual_information};

pub const FISHER_EPSILON: f64 = 1e-12;
pub const DEFAULT_FISHER_BINS: usize = 10;
pub const DEFAULT_MI_BINS: usize = 16;
pub const DEFAULT_FILTER_TOP: usize = 10;
pub const DEFAULT_BUDGET: usize = 10;
pub const DEFAULT_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("feature {0:?} is constant")]
    ConstantFeature(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewBins(usize),
    #[error("feature and target lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("top_k {top_k} exceeds the {available} available features")]
    TopKTooLarge { top_k: usize, available: usize },
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("evaluating {candidate:?} failed: {message}")]
    EvaluatorFailure { candidate: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMethod {
    Fisher,
    #[serde(rename = "mRMR")]
    Mrmr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub method: FilterMethod,
    pub ordered: Vec<(String, f64)>,
}

impl FeatureRanking {
    pub fn top(&self, k: usize) -> Vec<String> {
        self.ordered
            .iter()
            .take(k)
            .map(|(n, _)| n.clone())
            .collect()
    }
}

/// Between-class over within-class scatter of `feature`, with classes
/// from `bins` equal-frequency bins of `target`.
pub fn fisher_score(feature: &[f64], target: &[f64], bins: usize) -> Result<f64, SelectionError> {
    if bins < 2 {
        return Err(SelectionError::TooFewBins(bins));
    }
    if feature.len() != target.len() {
        return Err(SelectionError::LengthMismatch(feature.len(), target.len()));
    }
    if feature.windows(2).all(|w| w[0] == w[1]) {
        return Err(SelectionError::ConstantFeature(String::new()));
    }
    let classes = equal_frequency_bins(target, bins);
    let mu = mean(feature);
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (&c, &v) in classes.iter().zip(feature) {
        groups[c].push(v);
    }
    let (mut between, mut within) = (0.0, 0.0);
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let m = mean(g);
        let nc = g.len() as f64;
        between += nc * (m - mu) * (m - mu);
        within += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    Ok(between / (within + FISHER_EPSILON))
}

fn sort_ranking(v: &mut [(String, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Fisher scores for every column, descending. Constant columns score 0.
pub fn fisher_rank(matrix: &FeatureMatrix, bins: usize) -> Result<FeatureRanking, SelectionError> {
    let mut ordered = Vec::with_capacity(matrix.n_features());
    for (j, name) in matrix.feature_names.iter().enumerate() {
        let score = match fisher_score(&matrix.column(j), &matrix.target, bins) {
            Ok(s) => s,
            Err(SelectionError::ConstantFeature(_)) => 0.0,
            Err(e) => return Err(e),
        };
        ordered.push((name.clone(), score));
    }
    sort_ranking(&mut ordered);
    Ok(FeatureRanking {
        method: FilterMethod::Fisher,
        ordered,
    })
}

/// Greedy mRMR: each pick maximises relevance `I(f; y)` minus the mean
/// redundancy with already picked features. Entries keep pick order and
/// carry the criterion value at the time of the pick.
pub fn mrmr_rank(
    matrix: &FeatureMatrix,
    bins: usize,
    top_k: usize,
) -> Result<FeatureRanking, SelectionError> {
    let k = matrix.n_features();
    if top_k > k {
        return Err(SelectionError::TopKTooLarge {
            top_k,
            available: k,
        });
    }
    let binned: Vec<Vec<usize>> = (0..k)
        .map(|j| equal_frequency_bins(&matrix.column(j), bins))
        .collect();
    let y = equal_frequency_bins(&matrix.target, bins);
    let relevance: Vec<f64> = binned.iter().map(|b| mutual_information(b, &y)).collect();
    let mut redundancy = vec![0.0; k];
    let mut picked = vec![false; k];
    let mut ordered: Vec<(String, f64)> = Vec::with_capacity(top_k);
    for step in 0..top_k {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..k).filter(|&j| !picked[j]) {
            let score = if step == 0 {
                relevance[j]
            } else {
                relevance[j] - redundancy[j] / step as f64
            };
            let better = match best {
                None => true,
                Some((bj, bs)) => {
                    score > bs
                        || (score == bs && matrix.feature_names[j] < matrix.feature_names[bj])
                }
            };
            if better {
                best = Some((j, score));
            }
        }
        let (j, score) = best.expect("top_k <= available features");
        picked[j] = true;
        ordered.push((matrix.feature_names[j].clone(), score));
        for r in (0..k).filter(|&r| !picked[r]) {
            redundancy[r] += mutual_information(&binned[r], &binned[j]);
        }
    }
    Ok(FeatureRanking {
        method: FilterMethod::Mrmr,
        ordered,
    })
}

/// Union of the rankings' top-`top` lists, sorted lexicographically.
pub fn candidate_pool(rankings: &[&FeatureRanking], top: usize) -> Vec<String> {
    let mut pool: Vec<String> = rankings.iter().flat_map(|r| r.top(top)).collect();
    pool.sort();
    pool.dedup();
    pool
}

/// Scores a feature subset; lower is better.
pub trait SubsetEvaluator: Sync {
    fn evaluate(&self, features: &[String]) -> Result<f64, String>;
}

impl<F> SubsetEvaluator for F
where
    F: Fn(&[String]) -> Result<f64, String> + Sync,
{
    fn evaluate(&self, features: &[String]) -> Result<f64, String> {
        self(features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfsParams {
    pub budget: usize,
    pub tol: f64,
}

impl Default for SfsParams {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfsStep {
    pub feature: String,
    pub crps: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<String>,
    pub pool: Vec<String>,
    /// Validation CRPS of the empty set.
    pub baseline_crps: f64,
    /// Best candidate of every step, including a final rejected one.
    pub trace: Vec<SfsStep>,
}

/// Greedy forward selection over `pool`.
///
/// Each step scores every remaining candidate added to the current set and
/// keeps the argmin (ties go to the lexicographically smaller name). The
/// loop stops at `budget` or when the best candidate improves the current
/// CRPS by no more than `tol`.
pub fn sfs_select<E: SubsetEvaluator>(
    pool: &[String],
    params: &SfsParams,
    evaluator: &E,
) -> Result<SelectionResult, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    let mut remaining: Vec<String> = pool.to_vec();
    remaining.sort();
    remaining.dedup();
    let baseline = evaluator
        .evaluate(&[])
        .map_err(|message| SelectionError::EvaluatorFailure {
            candidate: String::new(),
            message,
        })?;
    let mut current = baseline;
    let mut selected: Vec<String> = Vec::new();
    let mut trace = Vec::new();
    while selected.len() < params.budget && !remaining.is_empty() {
        let scores: Vec<Result<f64, SelectionError>> = remaining
            .par_iter()
            .map(|cand| {
                let mut set = selected.clone();
                set.push(cand.clone());
                evaluator
                    .evaluate(&set)
                    .map_err(|message| SelectionError::EvaluatorFailure {
                        candidate: cand.clone(),
                        message,
                    })
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in scores.into_iter().enumerate() {
            let s = s?;
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
        let (i, crps) = best.expect("non-empty candidate list");
        let accepted = current - crps > params.tol;
        trace.push(SfsStep {
            feature: remaining[i].clone(),
            crps,
            accepted,
        });
        log::info!(
            "sfs step {}: {} crps={crps} accepted={accepted}",
            trace.len(),
            remaining[i]
        );
        if !accepted {
            break;
        }
        current = crps;
        selected.push(remaining.remove(i));
    }
    Ok(SelectionResult {
        selected,
        pool: pool.to_vec(),
        baseline_crps: baseline,
        trace,
    })
}

/// Mean validation CRPS of per-park GBRT models.
///
/// Each park's training matrix is split chronologically; the model is fitted
/// on the first part and scored on the last `validation_fraction`.
pub struct GbrtCrpsEvaluator {
    parks: Vec<FeatureMatrix>,
    levels: QuantileLevels,
    params: GbrtParams,
    validation_fraction: f64,
}

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.25;

impl GbrtCrpsEvaluator {
    pub fn new(parks: Vec<FeatureMatrix>, levels: QuantileLevels, params: GbrtParams) -> Self {
        Self {
            parks,
            levels,
            params,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }

    pub fn with_validation_fraction(mut self, f: f64) -> Self {
        self.validation_fraction = f;
        self
    }

    fn park_crps(&self, park: &FeatureMatrix, features: &[String]) -> Result<f64, String> {
        let m = park.select(features).map_err(|e| e.to_string())?;
        let order = m.canonical_order();
        let m = m.take_rows(&order);
        let n = m.n_rows();
        let n_val = ((n as f64) * self.validation_fraction).round() as usize;
        if n_val == 0 || n_val >= n {
            return Err(format!("{n} rows cannot be split for validation"));
        }
        let train = m.slice_rows(0..n - n_val);
        let val = m.slice_rows(n - n_val..n);
        let model = train_gbrt(&train, &self.levels, &self.params)
            .map_err(|e: ModelError| e.to_string())?;
        let mut total = 0.0;
        for i in 0..val.n_rows() {
            let f = crate::models::predict_ecdf(&model, val.row(i)).map_err(|e| e.to_string())?;
            total += crps_ecdf(&f, val.target[i]);
        }
        Ok(total / val.n_rows() as f64)
    }
}

impl SubsetEvaluator for GbrtCrpsEvaluator {
    fn evaluate(&self, features: &[String]) -> Result<f64, String> {
        let scores = self
            .parks
            .iter()
            .map(|p| self.park_crps(p, features))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(mean(&scores))
    }
}

//! Gradient-boosted regression trees for quantile regression.
//!
//! One ensemble per level. Each stage fits a least-squares tree to the
//! negative pinball gradient `tau - 1{y < F}` and then replaces every leaf
//! value with the empirical `tau`-quantile of the residuals that fall into
//! the leaf.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ModelError, ModelParams, ModelPayload, QuantileForecaster, QuantileLevels, TrainingData,
};
use crate::features::FeatureMatrix;
use crate::stats::{empirical_quantile, quantile_sorted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbrtParams {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for GbrtParams {
    fn default() -> Self {
        Self {
            trees: 100,
            depth: 3,
            learning_rate: 0.1,
            min_leaf: 10,
            seed: 0,
        }
    }
}

/// A binary tree stored as parallel arrays. `feature[i] < 0` marks a leaf.
/// Leaf values already include the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl Tree {
    fn leaf(value: f64) -> Self {
        Self {
            feature: vec![-1],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![value],
        }
    }

    fn push_node(&mut self) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(0.0);
        self.feature.len() - 1
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        while self.feature[node] >= 0 {
            node = if x[self.feature[node] as usize] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        self.value[node]
    }

    pub fn used_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.feature
            .iter()
            .filter(|f| **f >= 0)
            .map(|f| *f as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEnsemble {
    pub level: f64,
    pub init: f64,
    pub trees: Vec<Tree>,
}

impl LevelEnsemble {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbrtModel {
    pub ensembles: Vec<LevelEnsemble>,
    /// Trees whose root could not be split (single-leaf fallbacks).
    pub degenerate_trees: usize,
}

impl GbrtModel {
    pub(crate) fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.ensembles) {
            *o = e.predict(x);
        }
    }

    /// Indices of features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .ensembles
            .iter()
            .flat_map(|e| e.trees.iter().flat_map(|t| t.used_features()))
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

pub fn train_gbrt(
    matrix: &FeatureMatrix,
    levels: &QuantileLevels,
    params: &GbrtParams,
) -> Result<QuantileForecaster, ModelError> {
    if params.depth == 0 || params.min_leaf == 0 || !(params.learning_rate > 0.0) {
        return Err(ModelError::InvalidParams(
            "gbrt depth, min_leaf and learning_rate must be positive".into(),
        ));
    }
    let data = TrainingData::from_matrix(matrix, None, params.seed)?;
    let sorted: Vec<Vec<u32>> = (0..data.k)
        .map(|f| {
            let mut idx: Vec<u32> = (0..data.n() as u32).collect();
            idx.sort_by(|&a, &b| {
                data.row(a as usize)[f]
                    .total_cmp(&data.row(b as usize)[f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let fitted: Vec<(LevelEnsemble, usize)> = levels
        .as_slice()
        .par_iter()
        .map(|&tau| fit_level(&data, &sorted, tau, params))
        .collect();
    let degenerate_trees = fitted.iter().map(|(_, d)| d).sum();
    if degenerate_trees > 0 {
        log::debug!("gbrt: {degenerate_trees} trees fell back to a single leaf");
    }
    let model = GbrtModel {
        ensembles: fitted.into_iter().map(|(e, _)| e).collect(),
        degenerate_trees,
    };
    Ok(QuantileForecaster::assemble(
        matrix.feature_names.clone(),
        levels.clone(),
        ModelParams::Gbrt(params.clone()),
        ModelPayload::Gbrt(model),
    ))
}

fn fit_level(
    data: &TrainingData,
    sorted: &[Vec<u32>],
    tau: f64,
    params: &GbrtParams,
) -> (LevelEnsemble, usize) {
    let n = data.n();
    let init = empirical_quantile(&data.y, tau);
    let mut current = vec![init; n];
    let mut grad = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.trees);
    let mut degenerate = 0;
    for _ in 0..params.trees {
        for i in 0..n {
            grad[i] = tau - if data.y[i] < current[i] { 1.0 } else { 0.0 };
        }
        let (tree, node_of, split) = grow_tree(data, sorted, &grad, params);
        if !split {
            degenerate += 1;
        }
        let tree = set_leaf_values(tree, &node_of, data, &current, tau, params.learning_rate);
        for i in 0..n {
            current[i] += tree.value[node_of[i] as usize];
        }
        trees.push(tree);
    }
    (
        LevelEnsemble {
            level: tau,
            init,
            trees,
        },
        degenerate,
    )
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grow a least-squares tree on `grad`, level by level. Returns the tree
/// (leaf values unset), the final node of every row and whether any split
/// happened.
fn grow_tree(
    data: &TrainingData,
    sorted: &[Vec<u32>],
    grad: &[f64],
    params: &GbrtParams,
) -> (Tree, Vec<u32>, bool) {
    let n = data.n();
    let mut tree = Tree::leaf(0.0);
    let mut node_of = vec![0u32; n];
    let mut frontier = vec![0usize];
    let mut split_any = false;

    for _ in 0..params.depth {
        if frontier.is_empty() {
            break;
        }
        let n_nodes = tree.feature.len();
        let mut active = vec![false; n_nodes];
        let mut count = vec![0usize; n_nodes];
        let mut sum = vec![0.0f64; n_nodes];
        for &f in &frontier {
            active[f] = true;
        }
        for i in 0..n {
            let nd = node_of[i] as usize;
            if active[nd] {
                count[nd] += 1;
                sum[nd] += grad[i];
            }
        }
        let mut best: Vec<Option<Candidate>> = vec![None; n_nodes];
        let mut run_cnt = vec![0usize; n_nodes];
        let mut run_sum = vec![0.0f64; n_nodes];
        let mut last = vec![f64::NAN; n_nodes];
        for (f, order) in sorted.iter().enumerate() {
            run_cnt.iter_mut().for_each(|c| *c = 0);
            run_sum.iter_mut().for_each(|s| *s = 0.0);
            for &i in order {
                let i = i as usize;
                let nd = node_of[i] as usize;
                if !active[nd] {
                    continue;
                }
                let v = data.row(i)[f];
                let nl = run_cnt[nd];
                if nl > 0 && v > last[nd] {
                    let nr = count[nd] - nl;
                    if nl >= params.min_leaf && nr >= params.min_leaf {
                        let sl = run_sum[nd];
                        let sr = sum[nd] - sl;
                        let gain = sl * sl / nl as f64 + sr * sr / nr as f64
                            - sum[nd] * sum[nd] / count[nd] as f64;
                        let floor = 1e-9 * count[nd] as f64;
                        if gain > floor && best[nd].is_none_or(|b| gain > b.gain) {
                            let mut threshold = last[nd] + (v - last[nd]) / 2.0;
                            if threshold >= v {
                                threshold = last[nd];
                            }
                            best[nd] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                }
                run_cnt[nd] += 1;
                run_sum[nd] += grad[i];
                last[nd] = v;
            }
        }

        let mut next = Vec::new();
        let mut children = vec![(0u32, 0u32); n_nodes];
        for &nd in &frontier {
            if let Some(c) = best[nd] {
                let l = tree.push_node();
                let r = tree.push_node();
                tree.feature[nd] = c.feature as i32;
                tree.threshold[nd] = c.threshold;
                tree.left[nd] = l as u32;
                tree.right[nd] = r as u32;
                children[nd] = (l as u32, r as u32);
                next.push(l);
                next.push(r);
                split_any = true;
            }
        }
        for i in 0..n {
            let nd = node_of[i] as usize;
            if nd < n_nodes && active[nd] {
                if let Some(c) = best[nd] {
                    node_of[i] = if data.row(i)[c.feature] <= c.threshold {
                        children[nd].0
                    } else {
                        children[nd].1
                    };
                }
            }
        }
        frontier = next;
    }
    (tree, node_of, split_any)
}

fn set_leaf_values(
    mut tree: Tree,
    node_of: &[u32],
    data: &TrainingData,
    current: &[f64],
    tau: f64,
    learning_rate: f64,
) -> Tree {
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); tree.feature.len()];
    for i in 0..data.n() {
        buckets[node_of[i] as usize].push(data.y[i] - current[i]);
    }
    for (nd, mut residuals) in buckets.into_iter().enumerate() {
        if tree.feature[nd] < 0 && !residuals.is_empty() {
            residuals.sort_by(f64::total_cmp);
            tree.value[nd] = learning_rate * quantile_sorted(&residuals, tau);
        }
    }
    tree
}

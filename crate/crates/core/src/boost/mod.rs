//! Second-order regularized gradient boosting with logistic loss.

mod tree;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::SelectionResult;

pub use tree::{find_best_split, leaf_weight, presort, split_gain, split_threshold, Node, SortedColumns, SplitCandidate, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub base_score: f64,
    /// Kept for reproducible manifests; training itself uses no randomness.
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            base_score: 0.5,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("boost: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite value >= 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be a finite value >= 0");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be a finite value >= 0");
        }
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return bad("base_score must be in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_logit: f64,
    pub feature_count: usize,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// Mean training log-loss before any tree, then after each round.
    pub log_loss: Vec<f64>,
}

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss of margin `m` against label `y`.
pub fn logistic_loss(m: f64, y: f64) -> f64 {
    // log(1 + e^m) - y m, computed without overflow
    let softplus = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
    softplus - y * m
}

/// Gradient and hessian of the logistic loss with respect to the margin.
pub fn logistic_grad_hess(p: f64, y: f64) -> (f64, f64) {
    (p - y, p * (1.0 - p))
}

fn check_inputs(x: &Array2<f64>, labels: &[u8]) -> Result<()> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), actual: labels.len() });
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("boost: empty training set".into()));
    }
    if let Some(((r, c), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("boost: non-finite feature at row {r}, column {c}")));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidArgument("boost: labels must be 0 or 1".into()));
    }
    Ok(())
}

pub fn train_gbt(x: &Array2<f64>, labels: &[u8], params: &BoostParams) -> Result<BoostedModel> {
    train_gbt_with_trace(x, labels, params).map(|(m, _)| m)
}

pub fn train_gbt_with_trace(x: &Array2<f64>, labels: &[u8], params: &BoostParams) -> Result<(BoostedModel, TrainTrace)> {
    params.validate()?;
    check_inputs(x, labels)?;
    let x = x.as_standard_layout().into_owned();
    let n = x.nrows();
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let base_logit = (params.base_score / (1.0 - params.base_score)).ln();
    let mut margin = vec![base_logit; n];
    let mean_loss = |margin: &[f64]| margin.iter().zip(&y).map(|(&m, &t)| logistic_loss(m, t)).sum::<f64>() / n as f64;
    let mut trace = vec![mean_loss(&margin)];
    let sorted = SortedColumns::new(&x);
    let mut trees = Vec::with_capacity(params.n_rounds);
    let (mut grad, mut hess) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..params.n_rounds {
        for i in 0..n {
            (grad[i], hess[i]) = logistic_grad_hess(sigmoid(margin[i]), y[i]);
        }
        let tree = grow_tree_checked(&x, &sorted, &grad, &hess, params);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += params.learning_rate * tree.predict_row(x.row(i).as_slice().expect("standard layout"));
        }
        trace.push(mean_loss(&margin));
        trees.push(tree);
    }
    let model = BoostedModel { trees, learning_rate: params.learning_rate, base_logit, feature_count: x.ncols() };
    Ok((model, TrainTrace { log_loss: trace }))
}

fn grow_tree_checked(x: &Array2<f64>, sorted: &SortedColumns, grad: &[f64], hess: &[f64], params: &BoostParams) -> Tree {
    let tree = tree::grow_tree(x, sorted, grad, hess, params);
    debug_assert!(tree.depth() <= params.max_depth);
    tree
}

impl BoostedModel {
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.base_logit + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn n_internal(&self) -> usize {
        self.trees.iter().map(Tree::n_internal).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        for tree in &model.trees {
            for node in &tree.nodes {
                if let Node::Split { feature, left, right, .. } = *node {
                    if feature >= model.feature_count || left >= tree.nodes.len() || right >= tree.nodes.len() {
                        return Err(Error::InvalidArgument(format!("{}: malformed tree node", path.display())));
                    }
                }
            }
        }
        Ok(model)
    }
}

pub fn predict_proba(model: &BoostedModel, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.feature_count {
        return Err(Error::DimensionMismatch { expected: model.feature_count, actual: x.ncols() });
    }
    let x = x.as_standard_layout();
    Ok((0..x.nrows())
        .into_par_iter()
        .map(|i| sigmoid(model.margin_row(x.row(i).as_slice().expect("standard layout"))))
        .collect())
}

/// Number of internal nodes splitting on each feature across all trees.
pub fn feature_importance(model: &BoostedModel) -> Vec<usize> {
    let mut counts = vec![0; model.feature_count];
    for tree in &model.trees {
        for node in &tree.nodes {
            if let Node::Split { feature, .. } = node {
                counts[*feature] += 1;
            }
        }
    }
    counts
}

/// Keeps the `q` TOS of `selection` with the most splits in `model`, which
/// must have been trained on original features followed by the TOS columns
/// of `selection` in order. Ties prefer the earlier TOS column.
pub fn post_prune_top_q(model: &BoostedModel, selection: &SelectionResult, q: usize) -> Result<SelectionResult> {
    let p = selection.len();
    if q > p {
        return Err(Error::InvalidArgument(format!("post-prune: q = {q} exceeds |S| = {p}")));
    }
    if model.feature_count < p {
        return Err(Error::DimensionMismatch { expected: p, actual: model.feature_count });
    }
    let d = model.feature_count - p;
    let counts = feature_importance(model);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| counts[d + b].cmp(&counts[d + a]).then(a.cmp(&b)));
    Ok(SelectionResult {
        indices: order[..q].iter().map(|&pos| selection.indices[pos]).collect(),
        method: selection.method,
        trace: Vec::new(),
    })
}

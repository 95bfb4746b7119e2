//! Regression trees grown by exact greedy split search on second-order
//! gradient statistics.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BoostParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

/// A binary tree stored as a node arena rooted at index 0. Rows with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Self { nodes: vec![Node::Leaf { weight, cover: 0.0 }] }
    }

    /// Leaf weight reached by `row` (before shrinkage).
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { weight, .. } => return weight,
                Node::Split { feature, threshold, left, right, .. } => {
                    id = if row[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

/// Structure score gain of splitting (G, H) into (G_L, H_L) and (G_R, H_R).
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

/// Optimal leaf weight −G / (H + λ).
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub left_grad: f64,
    pub left_hess: f64,
}

/// Threshold strictly above `lo` and at most `hi`, near their midpoint.
pub fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

fn better(a: &SplitCandidate, b: &Option<SplitCandidate>) -> bool {
    match b {
        None => true,
        Some(b) => a.gain > b.gain,
    }
}

/// Best split of a node whose rows are listed per feature in ascending
/// feature order. Returns `None` if no split has positive gain while
/// satisfying `min_child_weight`. Ties go to the lowest feature index, then
/// to the lowest threshold.
pub fn find_best_split(
    x: &Array2<f64>,
    sorted_rows: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    params: &BoostParams,
) -> Option<SplitCandidate> {
    let rows = sorted_rows.first()?;
    let g_total: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h_total: f64 = rows.iter().map(|&r| hess[r]).sum();
    let per_feature: Vec<Option<SplitCandidate>> = sorted_rows
        .par_iter()
        .enumerate()
        .map(|(feature, order)| {
            let mut best: Option<SplitCandidate> = None;
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in 0..order.len().saturating_sub(1) {
                let r = order[w];
                gl += grad[r];
                hl += hess[r];
                let (lo, hi) = (x[[r, feature]], x[[order[w + 1], feature]]);
                if hi <= lo {
                    continue;
                }
                let (gr, hr) = (g_total - gl, h_total - hl);
                if hl < params.min_child_weight || hr < params.min_child_weight {
                    continue;
                }
                let cand = SplitCandidate {
                    feature,
                    threshold: split_threshold(lo, hi),
                    gain: split_gain(gl, hl, gr, hr, params.lambda, params.gamma),
                    left_grad: gl,
                    left_hess: hl,
                };
                if cand.gain > 0.0 && better(&cand, &best) {
                    best = Some(cand);
                }
            }
            best
        })
        .collect();
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |best, cand| if better(&cand, &best) { Some(cand) } else { best })
}

/// Per-feature row orders sorted by value, ties by row index.
pub fn presort(x: &Array2<f64>) -> Vec<Vec<usize>> {
    (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let mut rows: Vec<usize> = (0..x.nrows()).collect();
            rows.sort_by(|&a, &b| x[[a, j]].total_cmp(&x[[b, j]]).then(a.cmp(&b)));
            rows
        })
        .collect()
}

/// Column-sorted copy of a feature matrix: for each feature, the values in
/// ascending order paired with their rows.
pub struct SortedColumns {
    columns: Vec<Vec<(f64, u32)>>,
    n_rows: usize,
}

impl SortedColumns {
    pub fn new(x: &Array2<f64>) -> Self {
        let columns = presort(x)
            .into_iter()
            .enumerate()
            .map(|(j, rows)| rows.into_iter().map(|r| (x[[r, j]], r as u32)).collect())
            .collect();
        Self { columns, n_rows: x.nrows() }
    }
}

const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct ScanState {
    gl: f64,
    hl: f64,
    last: f64,
    seen: bool,
    best: Option<SplitCandidate>,
}

/// Grows one tree level by level. Each level scans every sorted column once,
/// accumulating left statistics for all open nodes at the same time; the
/// candidates and tie-breaking are those of [`find_best_split`] applied to
/// each node separately.
pub fn grow_tree(x: &Array2<f64>, sorted: &SortedColumns, grad: &[f64], hess: &[f64], params: &BoostParams) -> Tree {
    let n = sorted.n_rows;
    // Open node of each row, as an index into `open`.
    let mut slot = vec![0u32; n];
    let mut nodes = vec![Node::Leaf { weight: 0.0, cover: 0.0 }];
    let mut open: Vec<usize> = vec![0];
    for depth in 0..=params.max_depth {
        let m = open.len();
        let (mut g, mut h) = (vec![0.0; m], vec![0.0; m]);
        for (r, &s) in slot.iter().enumerate() {
            if s != NO_NODE {
                g[s as usize] += grad[r];
                h[s as usize] += hess[r];
            }
        }
        for (i, &id) in open.iter().enumerate() {
            nodes[id] = Node::Leaf { weight: leaf_weight(g[i], h[i], params.lambda), cover: h[i] };
        }
        if depth == params.max_depth {
            break;
        }
        let per_feature: Vec<Vec<Option<SplitCandidate>>> = sorted
            .columns
            .par_iter()
            .enumerate()
            .map(|(feature, column)| {
                let init = ScanState { gl: 0.0, hl: 0.0, last: 0.0, seen: false, best: None };
                let mut state = vec![init; m];
                for &(v, r) in column {
                    let s = slot[r as usize];
                    if s == NO_NODE {
                        continue;
                    }
                    let i = s as usize;
                    let st = &mut state[i];
                    if st.seen && v > st.last {
                        let (gr, hr) = (g[i] - st.gl, h[i] - st.hl);
                        if st.hl >= params.min_child_weight && hr >= params.min_child_weight {
                            let cand = SplitCandidate {
                                feature,
                                threshold: split_threshold(st.last, v),
                                gain: split_gain(st.gl, st.hl, gr, hr, params.lambda, params.gamma),
                                left_grad: st.gl,
                                left_hess: st.hl,
                            };
                            if cand.gain > 0.0 && better(&cand, &st.best) {
                                st.best = Some(cand);
                            }
                        }
                    }
                    st.gl += grad[r as usize];
                    st.hl += hess[r as usize];
                    st.last = v;
                    st.seen = true;
                }
                state.into_iter().map(|st| st.best).collect()
            })
            .collect();
        let mut best: Vec<Option<SplitCandidate>> = vec![None; m];
        for cands in &per_feature {
            for (b, c) in best.iter_mut().zip(cands) {
                if let Some(c) = c {
                    if better(c, b) {
                        *b = Some(*c);
                    }
                }
            }
        }
        // Children of node i take slots 2j and 2j+1 where j counts split nodes.
        let mut next_open = Vec::new();
        let mut child_slot = vec![NO_NODE; m];
        for (i, b) in best.iter().enumerate() {
            if let Some(c) = b {
                let id = open[i];
                let (left, right) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
                nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
                let cover = h[i];
                nodes[id] = Node::Split { feature: c.feature, threshold: c.threshold, left, right, gain: c.gain, cover };
                child_slot[i] = next_open.len() as u32;
                next_open.push(left);
                next_open.push(right);
            }
        }
        if next_open.is_empty() {
            break;
        }
        for (r, s) in slot.iter_mut().enumerate() {
            if *s == NO_NODE {
                continue;
            }
            let i = *s as usize;
            *s = match best[i] {
                Some(c) => child_slot[i] + u32::from(x[[r, c.feature]] >= c.threshold),
                None => NO_NODE,
            };
        }
        open = next_open;
    }
    Tree { nodes }
}

//! Isolation forest.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed::rng_from_seed;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful binary-search-tree lookup among `n`
/// points, used to normalize isolation depths.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

/// Anomaly score for a mean path length under sample size `psi`.
pub fn anomaly_score(mean_path: f64, psi: usize) -> f64 {
    2f64.powf(-mean_path / average_path_length(psi))
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { size: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn grow(x: &Array2<f64>, rows: &mut [usize], depth: usize, limit: usize, nodes: &mut Vec<Node>, rng: &mut ChaCha8Rng) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf { size: rows.len() });
        if depth >= limit || rows.len() <= 1 {
            return id;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..x.ncols())
            .filter_map(|j| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(x[[r, j]]), hi.max(x[[r, j]]))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let threshold = lo + rng.random::<f64>() * (hi - lo);
        let mut split = 0;
        for i in 0..rows.len() {
            if x[[rows[i], feature]] < threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let left = Self::grow(x, left_rows, depth + 1, limit, nodes, rng);
        let right = Self::grow(x, right_rows, depth + 1, limit, nodes, rng);
        nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn path_length(&self, point: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split { feature, threshold, left, right } => {
                    node = if point[feature] < threshold { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    psi: usize,
    dim: usize,
}

impl IsolationForest {
    /// Grows `n_trees` trees, each on `min(subsample, n)` rows drawn without
    /// replacement, with height limit ⌈log₂ ψ⌉.
    pub fn fit(x: &Array2<f64>, n_trees: usize, subsample: usize, seed: u64) -> Self {
        let n = x.nrows();
        let psi = subsample.min(n).max(2);
        let limit = (psi as f64).log2().ceil() as usize;
        let mut rng = rng_from_seed(seed);
        let trees = (0..n_trees)
            .map(|_| {
                let mut rows = sample(&mut rng, n, psi.min(n)).into_vec();
                let mut nodes = Vec::new();
                IsolationTree::grow(x, &mut rows, 0, limit, &mut nodes, &mut rng);
                IsolationTree { nodes }
            })
            .collect();
        Self { trees, psi, dim: x.ncols() }
    }

    pub fn sample_size(&self) -> usize {
        self.psi
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean_path_lengths(&self, points: ArrayView2<'_, f64>) -> Vec<f64> {
        let points = points.as_standard_layout();
        points
            .rows()
            .into_iter()
            .map(|p| {
                let p = p.as_slice().expect("standard layout");
                self.trees.iter().map(|t| t.path_length(p)).sum::<f64>() / self.trees.len() as f64
            })
            .collect()
    }

    pub fn score_points(&self, points: ArrayView2<'_, f64>) -> Vec<f64> {
        self.mean_path_lengths(points)
            .into_iter()
            .map(|h| anomaly_score(h, self.psi))
            .collect()
    }
}

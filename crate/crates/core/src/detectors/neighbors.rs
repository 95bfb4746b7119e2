//! Exact k-nearest-neighbor search over a fixed set of training points.
//!
//! Neighbors are ordered by (distance, point index), so ties always resolve
//! to the lower index. Low-dimensional data is served by a KD-tree; higher
//! dimensions fall back to a linear scan. Both paths evaluate the same
//! squared-distance function for every reported neighbor and return
//! bitwise-identical lists.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

/// Above this dimension the KD-tree rarely prunes and the scan is used.
const KD_TREE_MAX_DIM: usize = 16;
const LEAF_SIZE: usize = 16;
/// Query rows per matrix product in the linear scan.
const SCAN_BLOCK: usize = 64;
/// Relative error allowance of the matrix-product distance estimate.
const SCAN_SLACK: f64 = 1e-9;

fn row_norms(points: &Array2<f64>) -> Vec<f64> {
    points.rows().into_iter().map(|r| r.dot(&r)).collect()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k nearest training neighbors for each of m query points, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    k: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl Neighbors {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The first `k` neighbor indices of query `row`.
    pub fn indices(&self, row: usize, k: usize) -> &[usize] {
        assert!(k <= self.k);
        &self.indices[row * self.k..row * self.k + k]
    }

    /// The first `k` neighbor distances of query `row`, ascending.
    pub fn distances(&self, row: usize, k: usize) -> &[f64] {
        assert!(k <= self.k);
        &self.distances[row * self.k..row * self.k + k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
struct KdTree {
    nodes: Vec<KdNode>,
    order: Vec<usize>,
}

impl KdTree {
    fn build(points: &Array2<f64>) -> Self {
        let mut tree = KdTree {
            nodes: Vec::new(),
            order: (0..points.nrows()).collect(),
        };
        tree.build_node(points, 0, points.nrows());
        tree
    }

    fn build_node(&mut self, points: &Array2<f64>, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(KdNode::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let slice = &mut self.order[start..end];
        let (dim, spread) = (0..points.ncols())
            .map(|j| {
                let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = points[[i, j]];
                    (lo.min(v), hi.max(v))
                });
                (j, hi - lo)
            })
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if spread <= 0.0 {
            return id;
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| points[[a, dim]].total_cmp(&points[[b, dim]]));
        let value = points[[slice[mid], dim]];
        let left = self.build_node(points, start, start + mid);
        let right = self.build_node(points, start + mid, end);
        self.nodes[id] = KdNode::Split { dim, value, left, right };
        id
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        node: usize,
        points: &Array2<f64>,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let row = points.row(i);
                    let cand = Candidate {
                        dist2: squared_distance(query, row.as_slice().expect("standard layout")),
                        index: i,
                    };
                    push_bounded(heap, cand, k);
                }
            }
            KdNode::Split { dim, value, left, right } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, points, query, k, exclude, heap);
                // Points on the far side are at least |diff| away; equality must
                // still be visited so that lower-index ties are found.
                let bound = diff * diff;
                if heap.len() < k || heap.peek().is_some_and(|worst| bound <= worst.dist2) {
                    self.search(far, points, query, k, exclude, heap);
                }
            }
        }
    }
}

fn push_bounded(heap: &mut BinaryHeap<Candidate>, cand: Candidate, k: usize) {
    if heap.len() < k {
        heap.push(cand);
    } else if let Some(worst) = heap.peek() {
        if cand < *worst {
            heap.pop();
            heap.push(cand);
        }
    }
}

/// Exact nearest-neighbor index over a training matrix.
#[derive(Debug)]
pub struct NeighborIndex {
    points: Array2<f64>,
    norms: Vec<f64>,
    kd: Option<KdTree>,
}

impl NeighborIndex {
    pub fn new(points: Array2<f64>) -> Self {
        let points = points.as_standard_layout().into_owned();
        let kd = (points.ncols() <= KD_TREE_MAX_DIM).then(|| KdTree::build(&points));
        Self { norms: row_norms(&points), points, kd }
    }

    /// Index that always scans linearly.
    pub fn brute_force(points: Array2<f64>) -> Self {
        let points = points.as_standard_layout().into_owned();
        Self { norms: row_norms(&points), points, kd: None }
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn query_one(&self, tree: &KdTree, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Candidate> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        tree.search(0, &self.points, query, k, exclude, &mut heap);
        heap.into_sorted_vec()
    }

    /// Linear scan for a block of queries. Distances are first estimated with
    /// a matrix product, candidates that could be among the k nearest given a
    /// conservative error bound are then re-evaluated exactly, so the result
    /// equals an exact scan.
    fn scan_block(&self, queries: ArrayView2<'_, f64>, first: usize, k: usize, exclude_self: bool) -> Vec<Vec<Candidate>> {
        let gram = queries.dot(&self.points.t());
        let mut out = Vec::with_capacity(queries.nrows());
        let mut keys: Vec<f64> = Vec::with_capacity(self.len());
        for (qi, q) in queries.rows().into_iter().enumerate() {
            let q = q.as_slice().expect("standard layout");
            let exclude = exclude_self.then_some(first + qi);
            let qn: f64 = q.iter().map(|v| v * v).sum();
            let row = gram.row(qi);
            let approx = |j: usize| (qn + self.norms[j] - 2.0 * row[j], SCAN_SLACK * (qn + self.norms[j]) + f64::MIN_POSITIVE);
            keys.clear();
            keys.extend((0..self.len()).filter(|&j| Some(j) != exclude).map(|j| {
                let (a, tol) = approx(j);
                a + tol
            }));
            let bound = if k == 0 {
                f64::NEG_INFINITY
            } else if keys.len() > k {
                *keys.select_nth_unstable_by(k - 1, f64::total_cmp).1
            } else {
                f64::INFINITY
            };
            let mut cands: Vec<Candidate> = (0..self.len())
                .filter(|&j| Some(j) != exclude)
                .filter(|&j| {
                    let (a, tol) = approx(j);
                    a - tol <= bound
                })
                .map(|j| Candidate {
                    dist2: squared_distance(q, self.points.row(j).as_slice().expect("standard layout")),
                    index: j,
                })
                .collect();
            if cands.len() > k {
                cands.select_nth_unstable(k);
                cands.truncate(k);
            }
            cands.sort_unstable();
            out.push(cands);
        }
        out
    }

    fn search_all(&self, queries: ArrayView2<'_, f64>, k: usize, exclude_self: bool) -> Vec<Vec<Candidate>> {
        match &self.kd {
            Some(tree) => (0..queries.nrows())
                .into_par_iter()
                .map(|i| {
                    let q = queries.row(i);
                    self.query_one(tree, q.as_slice().expect("standard layout"), k, exclude_self.then_some(i))
                })
                .collect(),
            None => {
                let starts: Vec<usize> = (0..queries.nrows()).step_by(SCAN_BLOCK).collect();
                starts
                    .into_par_iter()
                    .map(|s| {
                        let e = (s + SCAN_BLOCK).min(queries.nrows());
                        self.scan_block(queries.slice(ndarray::s![s..e, ..]), s, k, exclude_self)
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .flatten()
                    .collect()
            }
        }
    }

    fn collect(&self, rows: Vec<Vec<Candidate>>, k: usize) -> Neighbors {
        let mut indices = Vec::with_capacity(rows.len() * k);
        let mut distances = Vec::with_capacity(rows.len() * k);
        for row in rows {
            debug_assert_eq!(row.len(), k);
            for c in row {
                indices.push(c.index);
                distances.push(c.dist2.sqrt());
            }
        }
        Neighbors { k, indices, distances }
    }

    /// k nearest training points of each query row. Requires k ≤ len.
    pub fn query(&self, queries: ArrayView2<'_, f64>, k: usize) -> Neighbors {
        assert!(k <= self.len(), "k={k} exceeds {} training points", self.len());
        assert_eq!(queries.ncols(), self.dim());
        let queries = queries.as_standard_layout();
        let rows = self.search_all(queries.view(), k, false);
        self.collect(rows, k)
    }

    /// k nearest neighbors of every training point among the other training
    /// points (each point excluded from its own list). Requires k < len.
    pub fn query_training(&self, k: usize) -> Neighbors {
        assert!(k < self.len(), "k={k} needs more than {} training points", self.len());
        let rows = self.search_all(self.points.view(), k, true);
        self.collect(rows, k)
    }
}

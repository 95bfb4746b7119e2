//! Neighbor-based outlier scores: kNN distance (k-th, mean, median), the local
//! outlier factor, and local outlier probabilities.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use statrs::function::erf::erf;

use super::neighbors::{NeighborIndex, Neighbors};
use super::spec::{DetectorKind, DetectorSpec};

/// Added to mean reachability distances so duplicate points keep a finite density.
const LRD_EPSILON: f64 = 1e-10;
/// Significance multiplier of local outlier probabilities.
pub const LOOP_LAMBDA: f64 = 3.0;

/// A neighbor index plus the self-excluded neighbor lists of the training
/// points, computed once for the largest k and shared by every detector.
#[derive(Debug, Clone)]
pub struct NeighborContext {
    pub(crate) index: Arc<NeighborIndex>,
    pub(crate) train: Arc<Neighbors>,
}

impl NeighborContext {
    /// Requires `k_max` < number of points.
    pub fn new(points: Array2<f64>, k_max: usize) -> Self {
        let index = NeighborIndex::new(points);
        let train = index.query_training(k_max);
        Self {
            index: Arc::new(index),
            train: Arc::new(train),
        }
    }

    pub fn k_max(&self) -> usize {
        self.train.k()
    }

    pub fn n_train(&self) -> usize {
        self.index.len()
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    /// Neighbor lists of external query points, for reuse across detectors.
    pub fn query(&self, points: ArrayView2<'_, f64>, k: usize) -> Neighbors {
        self.index.query(points, k)
    }
}

#[derive(Debug, Clone)]
enum State {
    Distance,
    Lof { k_distance: Vec<f64>, lrd: Vec<f64> },
    Loop { pdist: Vec<f64>, nplof: f64 },
}

#[derive(Debug, Clone)]
pub struct ProximityDetector {
    kind: DetectorKind,
    k: usize,
    context: NeighborContext,
    train_scores: Vec<f64>,
    state: State,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn lrd_of(dist: &[f64], idx: &[usize], k_distance: &[f64]) -> f64 {
    let reach: f64 = dist
        .iter()
        .zip(idx)
        .map(|(&d, &o)| d.max(k_distance[o]))
        .sum::<f64>()
        / dist.len() as f64;
    1.0 / (reach + LRD_EPSILON)
}

fn pdist_of(dist: &[f64]) -> f64 {
    let sq: f64 = dist.iter().map(|d| d * d).sum::<f64>() / dist.len() as f64;
    LOOP_LAMBDA * sq.sqrt()
}

fn plof(own: f64, idx: &[usize], pdist: &[f64]) -> f64 {
    let expected = idx.iter().map(|&o| pdist[o]).sum::<f64>() / idx.len() as f64;
    if expected > 0.0 {
        own / expected - 1.0
    } else if own > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn loop_probability(plof: f64, nplof: f64) -> f64 {
    if plof <= 0.0 {
        return 0.0;
    }
    if nplof <= 0.0 || plof.is_infinite() {
        return 1.0;
    }
    erf(plof / (nplof * std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
}

impl ProximityDetector {
    /// Fits using a shared context. Requires `k` ≤ `context.k_max()`.
    pub(crate) fn fit(spec: &DetectorSpec, context: &NeighborContext) -> Self {
        let kind = spec.kind();
        let k = spec.k().expect("neighbor-based spec");
        assert!(k <= context.k_max());
        let train = &context.train;
        let n = context.n_train();
        let state = match kind {
            DetectorKind::Lof => {
                let k_distance: Vec<f64> = (0..n).map(|i| train.distances(i, k)[k - 1]).collect();
                let lrd = (0..n)
                    .map(|i| lrd_of(train.distances(i, k), train.indices(i, k), &k_distance))
                    .collect();
                State::Lof { k_distance, lrd }
            }
            DetectorKind::Loop => {
                let pdist: Vec<f64> = (0..n).map(|i| pdist_of(train.distances(i, k))).collect();
                let mean_sq = (0..n)
                    .map(|i| {
                        let p = plof(pdist[i], train.indices(i, k), &pdist);
                        if p.is_finite() { p * p } else { 0.0 }
                    })
                    .sum::<f64>()
                    / n as f64;
                State::Loop {
                    pdist,
                    nplof: LOOP_LAMBDA * mean_sq.sqrt(),
                }
            }
            _ => State::Distance,
        };
        let mut detector = Self {
            kind,
            k,
            context: context.clone(),
            train_scores: Vec::new(),
            state,
        };
        detector.train_scores = detector.score_neighbors(train);
        detector
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Scores of the training points, each excluded from its own neighbor set.
    pub fn train_scores(&self) -> &[f64] {
        &self.train_scores
    }

    pub fn dim(&self) -> usize {
        self.context.index.dim()
    }

    /// Scores query points from precomputed training-neighbor lists
    /// holding at least `k` entries per row.
    pub fn score_neighbors(&self, neighbors: &Neighbors) -> Vec<f64> {
        let k = self.k;
        (0..neighbors.len())
            .map(|row| {
                let dist = neighbors.distances(row, k);
                let idx = neighbors.indices(row, k);
                match &self.state {
                    State::Distance => match self.kind {
                        DetectorKind::Knn => dist[k - 1],
                        DetectorKind::AvgKnn => mean(dist),
                        DetectorKind::KMedian => median_sorted(dist),
                        _ => unreachable!("distance state only for kNN kinds"),
                    },
                    State::Lof { k_distance, lrd } => {
                        let own = lrd_of(dist, idx, k_distance);
                        idx.iter().map(|&o| lrd[o]).sum::<f64>() / k as f64 / own
                    }
                    State::Loop { pdist, nplof } => {
                        loop_probability(plof(pdist_of(dist), idx, pdist), *nplof)
                    }
                }
            })
            .collect()
    }

    pub fn score_points(&self, points: ArrayView2<'_, f64>) -> Vec<f64> {
        let neighbors = self.context.index.query(points, self.k);
        self.score_neighbors(&neighbors)
    }
}

//! The seven unsupervised outlier scoring functions.
//!
//! Every detector is oriented so that a higher score means more outlying.
//! Neighbor-based detectors exclude a training point from its own neighbor
//! set when the training set itself is scored ([`FittedDetector::train_scores`]).

mod iforest;
mod neighbors;
mod ocsvm;
mod proximity;
mod spec;

use ndarray::ArrayView2;

pub use iforest::{anomaly_score, average_path_length, IsolationForest};
pub use neighbors::{NeighborIndex, Neighbors};
pub use ocsvm::{scale_gamma, OneClassSvm};
pub use proximity::{NeighborContext, ProximityDetector, LOOP_LAMBDA};
pub use spec::{build_grid, default_k_range, DetectorKind, DetectorSpec, GammaMode, GridConfig};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Model {
    Proximity(ProximityDetector),
    Ocsvm(OneClassSvm),
    Iforest(IsolationForest),
}

/// A detector fitted on a training set, ready to score arbitrary points.
#[derive(Debug, Clone)]
pub struct FittedDetector {
    spec: DetectorSpec,
    model: Model,
    train_scores: Vec<f64>,
}

/// Result of fitting: either a detector or a skip with its reason.
#[derive(Debug, Clone)]
pub enum FitOutcome {
    Fitted(FittedDetector),
    Skipped { spec: DetectorSpec, reason: String },
}

impl FitOutcome {
    pub fn fitted(self) -> Option<FittedDetector> {
        match self {
            FitOutcome::Fitted(d) => Some(d),
            FitOutcome::Skipped { .. } => None,
        }
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self, FitOutcome::Skipped { .. })
    }
}

fn skip_reason(spec: &DetectorSpec, n: usize) -> Option<String> {
    spec.k()
        .filter(|&k| k >= n)
        .map(|k| format!("k={k} needs more than {n} training points"))
}

/// Fits `spec` on the training features; labels are ignored.
pub fn fit_detector(spec: &DetectorSpec, train: &Dataset) -> Result<FitOutcome> {
    let n = train.n_rows();
    if let Some(reason) = skip_reason(spec, n) {
        log::warn!("skipping {spec}: {reason}");
        return Ok(FitOutcome::Skipped { spec: spec.clone(), reason });
    }
    let context = spec
        .k()
        .map(|k| NeighborContext::new(train.features().clone(), k));
    fit_detector_with(spec, train, context.as_ref())
}

/// Like [`fit_detector`], reusing a neighbor context built on the same
/// training features for neighbor-based kinds.
pub fn fit_detector_with(spec: &DetectorSpec, train: &Dataset, context: Option<&NeighborContext>) -> Result<FitOutcome> {
    spec.validate()?;
    let x = train.features();
    if let Some(reason) = skip_reason(spec, x.nrows()) {
        log::warn!("skipping {spec}: {reason}");
        return Ok(FitOutcome::Skipped { spec: spec.clone(), reason });
    }
    let wrap = |e: Error| Error::Detector {
        spec: spec.to_string(),
        source: Box::new(e),
    };
    let (model, train_scores) = match *spec {
        DetectorSpec::Ocsvm { nu, gamma, max_train, seed } => {
            let m = OneClassSvm::fit(x, nu, gamma, max_train, seed).map_err(wrap)?;
            let s = m.score_points(x.view());
            (Model::Ocsvm(m), s)
        }
        DetectorSpec::Iforest { n_trees, subsample, seed } => {
            let m = IsolationForest::fit(x, n_trees, subsample, seed);
            let s = m.score_points(x.view());
            (Model::Iforest(m), s)
        }
        _ => {
            let k = spec.k().expect("neighbor-based spec");
            let context = match context {
                Some(c) if c.k_max() >= k && c.n_train() == x.nrows() => c.clone(),
                _ => NeighborContext::new(x.clone(), k),
            };
            let m = ProximityDetector::fit(spec, &context);
            let s = m.train_scores().to_vec();
            (Model::Proximity(m), s)
        }
    };
    Ok(FitOutcome::Fitted(FittedDetector {
        spec: spec.clone(),
        model,
        train_scores,
    }))
}

impl FittedDetector {
    pub fn spec(&self) -> &DetectorSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            Model::Proximity(m) => m.dim(),
            Model::Ocsvm(m) => m.dim(),
            Model::Iforest(m) => m.dim(),
        }
    }

    /// Scores of the training rows (self-excluded for neighbor-based kinds).
    pub fn train_scores(&self) -> &[f64] {
        &self.train_scores
    }

    /// Scores arbitrary points; rows are treated as new points.
    pub fn score_points(&self, points: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if points.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: points.ncols(),
            });
        }
        Ok(match &self.model {
            Model::Proximity(m) => m.score_points(points),
            Model::Ocsvm(m) => m.score_points(points),
            Model::Iforest(m) => m.score_points(points),
        })
    }

    /// Scores points given their precomputed training-neighbor lists. Falls
    /// back to a fresh query for kinds that do not use neighbors.
    pub fn score_with_neighbors(&self, points: ArrayView2<'_, f64>, neighbors: Option<&Neighbors>) -> Result<Vec<f64>> {
        match (&self.model, neighbors) {
            (Model::Proximity(m), Some(nb)) if nb.k() >= m.k() && nb.len() == points.nrows() => {
                Ok(m.score_neighbors(nb))
            }
            _ => self.score_points(points),
        }
    }
}

//! Transformed outlier scores: the n×k matrix of detector outputs used as
//! learned features, plus the two unsupervised combination baselines.

use std::fs::File;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::detectors::{fit_detector_with, DetectorSpec, FitOutcome, NeighborContext};
use crate::error::{Error, Result};
use crate::eval::roc_auc;

/// Detector scores on the training and test rows, one column per detector.
#[derive(Debug, Clone, PartialEq)]
pub struct TosMatrix {
    train_scores: Array2<f64>,
    test_scores: Array2<f64>,
    specs: Vec<DetectorSpec>,
    train_roc: Vec<f64>,
    skipped: Vec<DetectorSpec>,
}

impl TosMatrix {
    /// Assembles a matrix from precomputed columns; `train_roc` is computed
    /// from `train_labels`.
    pub fn from_columns(
        train_scores: Array2<f64>,
        test_scores: Array2<f64>,
        specs: Vec<DetectorSpec>,
        train_labels: &[u8],
    ) -> Result<Self> {
        let k = specs.len();
        if train_scores.ncols() != k || test_scores.ncols() != k {
            return Err(Error::InvalidArgument(format!(
                "column counts disagree: {} train, {} test, {k} specs",
                train_scores.ncols(),
                test_scores.ncols()
            )));
        }
        if train_scores.nrows() != train_labels.len() {
            return Err(Error::DimensionMismatch {
                expected: train_labels.len(),
                actual: train_scores.nrows(),
            });
        }
        if train_scores.iter().chain(test_scores.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("TOS entries must be finite".into()));
        }
        let train_roc = (0..k)
            .map(|j| roc_auc(&train_scores.column(j).to_vec(), train_labels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            train_scores,
            test_scores,
            specs,
            train_roc,
            skipped: Vec::new(),
        })
    }

    pub fn train_scores(&self) -> &Array2<f64> {
        &self.train_scores
    }

    pub fn test_scores(&self) -> &Array2<f64> {
        &self.test_scores
    }

    pub fn specs(&self) -> &[DetectorSpec] {
        &self.specs
    }

    /// ROC of each column against the training labels.
    pub fn train_roc(&self) -> &[f64] {
        &self.train_roc
    }

    /// Specs dropped at fit time (k ≥ training size).
    pub fn skipped(&self) -> &[DetectorSpec] {
        &self.skipped
    }

    pub fn n_columns(&self) -> usize {
        self.specs.len()
    }

    pub fn train_column(&self, j: usize) -> Vec<f64> {
        self.train_scores.column(j).to_vec()
    }

    pub fn test_column(&self, j: usize) -> Vec<f64> {
        self.test_scores.column(j).to_vec()
    }
}

/// Fits every detector on the training features only and scores both the
/// training rows (self-excluded) and the test rows. Neighbor searches are
/// shared across detectors. Column order follows `specs`, minus skipped specs.
pub fn build_tos(specs: &[DetectorSpec], train: &Dataset, test: &Dataset) -> Result<TosMatrix> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no detector specs given".into()));
    }
    if train.n_features() != test.n_features() {
        return Err(Error::DimensionMismatch {
            expected: train.n_features(),
            actual: test.n_features(),
        });
    }
    let labels = train.require_labels()?;
    let n = train.n_rows();
    let k_max = specs.iter().filter_map(DetectorSpec::k).filter(|&k| k < n).max();
    let (context, test_neighbors) = match k_max {
        Some(k) => {
            let ctx = NeighborContext::new(train.features().clone(), k);
            let nb = ctx.query(test.features().view(), k);
            (Some(ctx), Some(nb))
        }
        None => (None, None),
    };

    let columns: Vec<Option<(Vec<f64>, Vec<f64>)>> = specs
        .par_iter()
        .map(|spec| -> Result<_> {
            match fit_detector_with(spec, train, context.as_ref())? {
                FitOutcome::Skipped { .. } => Ok(None),
                FitOutcome::Fitted(fitted) => {
                    let test_scores = fitted
                        .score_with_neighbors(test.features().view(), test_neighbors.as_ref())
                        .map_err(|e| Error::Detector { spec: spec.to_string(), source: Box::new(e) })?;
                    Ok(Some((fitted.train_scores().to_vec(), test_scores)))
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    let mut train_cols = Vec::new();
    let mut test_cols = Vec::new();
    for (spec, column) in specs.iter().zip(columns) {
        match column {
            Some((tr, te)) => {
                kept.push(spec.clone());
                train_cols.push(tr);
                test_cols.push(te);
            }
            None => skipped.push(spec.clone()),
        }
    }
    if kept.is_empty() {
        return Err(Error::NoTosProduced);
    }
    if !skipped.is_empty() {
        log::warn!("{} of {} detector specs skipped on {}", skipped.len(), specs.len(), train.name());
    }
    let mut tos = TosMatrix::from_columns(
        stack_columns(&train_cols, n),
        stack_columns(&test_cols, test.n_rows()),
        kept,
        labels,
    )?;
    tos.skipped = skipped;
    Ok(tos)
}

fn stack_columns(columns: &[Vec<f64>], rows: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, columns.len()), |(i, j)| columns[j][i])
}

fn mean_and_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn standardize(v: &[f64], mean: f64, std: f64) -> Vec<f64> {
    if std > 0.0 {
        v.iter().map(|x| (x - mean) / std).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// z-score with the population standard deviation; zero variance maps to zeros.
pub fn normalize_column(v: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_and_std(v);
    standardize(v, mean, std)
}

/// Full ensemble: each column is z-scored with its training statistics
/// (applied to both sides), then columns are averaged with equal weight.
pub fn full_tos(tos: &TosMatrix) -> (Vec<f64>, Vec<f64>) {
    let k = tos.n_columns();
    let mut train = vec![0.0; tos.train_scores.nrows()];
    let mut test = vec![0.0; tos.test_scores.nrows()];
    for j in 0..k {
        let tr = tos.train_column(j);
        let (mean, std) = mean_and_std(&tr);
        for (acc, z) in train.iter_mut().zip(standardize(&tr, mean, std)) {
            *acc += z;
        }
        for (acc, z) in test.iter_mut().zip(standardize(&tos.test_column(j), mean, std)) {
            *acc += z;
        }
    }
    let scale = 1.0 / k as f64;
    train.iter_mut().chain(test.iter_mut()).for_each(|v| *v *= scale);
    (train, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

/// The single column with the highest ROC against `labels` on the chosen
/// side, lowest index on ties. This consults evaluation labels and is an
/// oracle baseline.
pub fn best_tos(tos: &TosMatrix, labels: &[u8], side: Side) -> Result<(usize, Vec<f64>)> {
    let scores = match side {
        Side::Train => &tos.train_scores,
        Side::Test => &tos.test_scores,
    };
    if scores.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.nrows(),
            actual: labels.len(),
        });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..tos.n_columns() {
        let roc = roc_auc(&scores.column(j).to_vec(), labels)?;
        if roc > best.1 {
            best = (j, roc);
        }
    }
    Ok((best.0, scores.column(best.0).to_vec()))
}

/// Writes one side of the matrix as CSV with serialized specs as headers.
pub fn write_scores_csv(path: impl AsRef<Path>, scores: ArrayView2<'_, f64>, specs: &[DetectorSpec]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(specs.iter().map(ToString::to_string))?;
    for row in scores.rows() {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes the per-column training ROC sidecar (`spec,train_roc`).
pub fn write_roc_csv(path: impl AsRef<Path>, tos: &TosMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["spec", "train_roc"])?;
    for (spec, roc) in tos.specs.iter().zip(&tos.train_roc) {
        w.write_record([spec.to_string(), format!("{roc}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a score CSV written by [`write_scores_csv`], parsing headers back to specs.
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<(Vec<DetectorSpec>, Array2<f64>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let specs = r
        .headers()?
        .iter()
        .map(str::parse)
        .collect::<Result<Vec<DetectorSpec>>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for record in r.records() {
        let record = record?;
        for cell in record.iter() {
            values.push(cell.parse::<f64>().map_err(|_| Error::Ingestion {
                path: path.to_owned(),
                row: rows + 1,
                column: String::new(),
                message: format!("cannot parse {cell:?}"),
            })?);
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, specs.len()), values).map_err(|e| Error::InvalidDataset(e.to_string()))?;
    Ok((specs, m))
}

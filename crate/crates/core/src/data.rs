//! Datasets, CSV ingestion, stratified splitting and synthetic benchmarks.

use std::fs::File;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// An n×d feature matrix with optional binary outlier labels (1 = outlier).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<u8>>,
    feature_names: Option<Vec<String>>,
    name: String,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Option<Vec<u8>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 rows, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidDataset("need at least 1 feature column".into()));
        }
        if let Some((idx, v)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value {v} at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "label length {} does not match row count {n}",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(Error::InvalidDataset(format!("label {bad} is not 0 or 1")));
            }
        }
        if let Some(names) = &feature_names {
            if names.len() != d {
                return Err(Error::InvalidDataset(format!(
                    "{} feature names for {d} columns",
                    names.len()
                )));
            }
        }
        Ok(Self {
            features: features.as_standard_layout().into_owned(),
            labels,
            feature_names,
            name: name.into(),
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Labels, or an error naming the dataset when it is unlabeled.
    pub fn require_labels(&self) -> Result<&[u8]> {
        self.labels()
            .ok_or_else(|| Error::InvalidDataset(format!("dataset {:?} has no labels", self.name)))
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_outliers(&self) -> usize {
        self.labels()
            .map(|l| l.iter().filter(|&&v| v == 1).count())
            .unwrap_or(0)
    }

    /// The dataset restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize], name: impl Into<String>) -> Result<Self> {
        let features = self.features.select(Axis(0), rows);
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        Dataset::new(name, features, labels, self.feature_names.clone())
    }
}

/// Reads a headered CSV file. When `label_column` is given, that column is
/// consumed as 0/1 labels and every other column becomes a feature.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();

    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidDataset(format!("{}: label column {name:?} not found", path.display()))
        })?),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != label_idx).collect();
    let d = feature_cols.len();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        // Data rows are numbered from 1; the header is row 0.
        let row = row + 1;
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Ingestion {
                path: path.to_owned(),
                row,
                column: headers[c].clone(),
                message: format!("cannot parse {cell:?} as a real number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingestion {
                    path: path.to_owned(),
                    row,
                    column: headers[c].clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        if let Some(li) = label_idx {
            let cell = record.get(li).unwrap_or("").trim();
            let label = match cell {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Ingestion {
                        path: path.to_owned(),
                        row,
                        column: headers[li].clone(),
                        message: format!("label must be \"0\" or \"1\", got {other:?}"),
                    })
                }
            };
            labels.push(label);
        }
        n += 1;
    }
    let features = Array2::from_shape_vec((n, d), values)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, label_idx.map(|_| labels), Some(names))
}

/// Writes the dataset as CSV; labels, when present, go to a trailing `label` column.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header: Vec<String> = match ds.feature_names() {
        Some(names) => names.to_vec(),
        None => (0..ds.n_features()).map(|j| format!("x{j}")).collect(),
    };
    if ds.labels().is_some() {
        header.push("label".into());
    }
    writer.write_record(&header)?;
    for (i, row) in ds.features().rows().into_iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        if let Some(labels) = ds.labels() {
            record.push(labels[i].to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Stratified train/test index partition. Both index lists are ascending.
pub fn split_indices(labels: &[u8], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = labels.len();
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        classes[usize::from(l == 1)].push(i);
    }
    for (class, members) in classes.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "class {class} has {} member(s); a stratified split needs at least 2 so that \
                 both parts contain it; use a larger dataset",
                members.len()
            )));
        }
    }
    let n_out = classes[1].len();
    let n_in = classes[0].len();
    let total_train = (n as f64 * train_fraction).round() as usize;
    let out_train = ((n_out * total_train) as f64 / n as f64).round() as usize;
    let out_train = out_train.clamp(1, n_out - 1);
    let in_train = total_train.saturating_sub(out_train).clamp(1, n_in - 1);

    let mut rng = rng_from_seed(seed);
    let mut train = Vec::with_capacity(total_train);
    let mut test = Vec::with_capacity(n - total_train);
    for (members, k) in [(&classes[0], in_train), (&classes[1], out_train)] {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        train.extend_from_slice(&shuffled[..k]);
        test.extend_from_slice(&shuffled[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified split of a labeled dataset; see [`split_indices`].
pub fn split_train_test(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let labels = ds.require_labels()?;
    let (train, test) = split_indices(labels, train_fraction, seed)?;
    Ok((
        ds.subset(&train, format!("{}/train", ds.name()))?,
        ds.subset(&test, format!("{}/test", ds.name()))?,
    ))
}

/// Parameters of the Gaussian-shift synthetic benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub outlier_fraction: f64,
    /// Outlier shift per informative axis, in inlier standard deviations.
    pub separation: f64,
    pub informative_dims: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn n_outliers(&self) -> usize {
        (self.n as f64 * self.outlier_fraction).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.outlier_fraction > 0.0 && self.outlier_fraction < 0.5) {
            return bad(format!("outlier_fraction must lie in (0, 0.5), got {}", self.outlier_fraction));
        }
        if self.n < 2 || self.d < 1 {
            return bad(format!("need n >= 2 and d >= 1, got n={} d={}", self.n, self.d));
        }
        if self.n_outliers() < 1 {
            return bad(format!("n * outlier_fraction = {} yields no outliers", self.n as f64 * self.outlier_fraction));
        }
        if self.informative_dims < 1 || self.informative_dims > self.d {
            return bad(format!("informative_dims must lie in [1, d={}], got {}", self.d, self.informative_dims));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be finite and >= 0, got {}", self.separation));
        }
        Ok(())
    }
}

/// Draws inliers from N(0, I). Each outlier is drawn from the same law and then
/// shifted by ±`separation` along a fixed random set of informative axes, with an
/// independent uniform sign per axis and per outlier.
pub fn generate_synthetic(spec: &SyntheticSpec, name: impl Into<String>) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let informative = sample(&mut rng, spec.d, spec.informative_dims).into_vec();
    let mut labels = vec![0u8; spec.n];
    for i in sample(&mut rng, spec.n, spec.n_outliers()).into_iter() {
        labels[i] = 1;
    }
    let mut features = Array2::zeros((spec.n, spec.d));
    for (mut row, &label) in features.rows_mut().into_iter().zip(&labels) {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        if label == 1 {
            for &axis in &informative {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                row[axis] += sign * spec.separation;
            }
        }
    }
    Dataset::new(name, features, Some(labels), None)
}

/// Named benchmark shapes mirroring the seven ODDS datasets commonly used in
/// outlier ensemble studies (points, features, outliers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub n: usize,
    pub d: usize,
    pub outliers: usize,
    pub informative_dims: usize,
    pub separation: f64,
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "synth-arrhythmia-like", n: 452, d: 274, outliers: 66, informative_dims: 30, separation: 1.0 },
    Preset { name: "synth-letter-like", n: 1600, d: 32, outliers: 100, informative_dims: 12, separation: 1.0 },
    Preset { name: "synth-cardio-like", n: 1831, d: 21, outliers: 176, informative_dims: 9, separation: 1.1 },
    Preset { name: "synth-speech-like", n: 3686, d: 600, outliers: 61, informative_dims: 60, separation: 1.2 },
    Preset { name: "synth-satellite-like", n: 6435, d: 36, outliers: 2036, informative_dims: 24, separation: 0.8 },
    Preset { name: "synth-mnist-like", n: 7603, d: 100, outliers: 700, informative_dims: 40, separation: 0.8 },
    Preset { name: "synth-mammography-like", n: 11863, d: 6, outliers: 260, informative_dims: 4, separation: 1.3 },
];

impl Preset {
    pub fn by_name(name: &str) -> Option<&'static Preset> {
        PRESETS.iter().find(|p| p.name == name)
    }

    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n: self.n,
            d: self.d,
            // Half an outlier of slack keeps floor(n * fraction) exact under rounding.
            outlier_fraction: (self.outliers as f64 + 0.5) / self.n as f64,
            separation: self.separation,
            informative_dims: self.informative_dims,
            seed,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        generate_synthetic(&self.spec(seed), self.name)
    }
}

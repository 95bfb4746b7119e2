//! Detector specifications, their text form and the hyperparameter grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DetectorKind {
    Knn,
    AvgKnn,
    KMedian,
    Lof,
    Loop,
    Ocsvm,
    Iforest,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 7] = [
        DetectorKind::Knn,
        DetectorKind::AvgKnn,
        DetectorKind::KMedian,
        DetectorKind::Lof,
        DetectorKind::Loop,
        DetectorKind::Ocsvm,
        DetectorKind::Iforest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Knn => "KNN",
            DetectorKind::AvgKnn => "AVG_KNN",
            DetectorKind::KMedian => "K_MEDIAN",
            DetectorKind::Lof => "LOF",
            DetectorKind::Loop => "LOOP",
            DetectorKind::Ocsvm => "OCSVM",
            DetectorKind::Iforest => "IFOREST",
        }
    }

    pub fn is_neighbor_based(self) -> bool {
        !matches!(self, DetectorKind::Ocsvm | DetectorKind::Iforest)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::SpecParse(s.to_owned()))
    }
}

/// RBF width policy for the one-class SVM.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GammaMode {
    /// γ = 1 / (d · var(X_train)), variance over all matrix entries.
    #[default]
    Scale,
    Fixed(f64),
}

impl fmt::Display for GammaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaMode::Scale => f.write_str("scale"),
            GammaMode::Fixed(g) => write!(f, "{g}"),
        }
    }
}

impl FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "scale" {
            return Ok(GammaMode::Scale);
        }
        match s.parse::<f64>() {
            Ok(g) if g > 0.0 && g.is_finite() => Ok(GammaMode::Fixed(g)),
            _ => Err(Error::SpecParse(format!("gamma={s}"))),
        }
    }
}

impl Serialize for GammaMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GammaMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Number(g) => GammaMode::from_str(&g.to_string()).map_err(serde::de::Error::custom),
        }
    }
}

/// One unsupervised outlier scoring function and its hyperparameters.
///
/// The text form is `KIND(key=value;...)`, e.g. `KNN(k=5)` or
/// `IFOREST(n_trees=100;subsample=256;seed=42)`. It is used in config files and
/// as the column header of exported TOS matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSpec {
    Knn { k: usize },
    AvgKnn { k: usize },
    KMedian { k: usize },
    Lof { k: usize },
    Loop { k: usize },
    Ocsvm {
        nu: f64,
        gamma: GammaMode,
        /// Training rows are uniformly subsampled to this many when set.
        max_train: Option<usize>,
        seed: u64,
    },
    Iforest { n_trees: usize, subsample: usize, seed: u64 },
}

impl DetectorSpec {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorSpec::Knn { .. } => DetectorKind::Knn,
            DetectorSpec::AvgKnn { .. } => DetectorKind::AvgKnn,
            DetectorSpec::KMedian { .. } => DetectorKind::KMedian,
            DetectorSpec::Lof { .. } => DetectorKind::Lof,
            DetectorSpec::Loop { .. } => DetectorKind::Loop,
            DetectorSpec::Ocsvm { .. } => DetectorKind::Ocsvm,
            DetectorSpec::Iforest { .. } => DetectorKind::Iforest,
        }
    }

    /// Neighbor count for neighbor-based kinds.
    pub fn k(&self) -> Option<usize> {
        match *self {
            DetectorSpec::Knn { k }
            | DetectorSpec::AvgKnn { k }
            | DetectorSpec::KMedian { k }
            | DetectorSpec::Lof { k }
            | DetectorSpec::Loop { k } => Some(k),
            _ => None,
        }
    }

    pub fn neighbor(kind: DetectorKind, k: usize) -> Option<Self> {
        Some(match kind {
            DetectorKind::Knn => DetectorSpec::Knn { k },
            DetectorKind::AvgKnn => DetectorSpec::AvgKnn { k },
            DetectorKind::KMedian => DetectorSpec::KMedian { k },
            DetectorKind::Lof => DetectorSpec::Lof { k },
            DetectorKind::Loop => DetectorSpec::Loop { k },
            _ => return None,
        })
    }

    /// Checks the invariants that do not depend on the training set.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidArgument(format!("{self}: {m}")));
        match *self {
            DetectorSpec::Ocsvm { nu, max_train, .. } => {
                if !(nu > 0.0 && nu <= 1.0) {
                    return invalid(format!("nu must lie in (0, 1], got {nu}"));
                }
                if max_train.is_some_and(|c| c < 2) {
                    return invalid("max_train must be at least 2".into());
                }
            }
            DetectorSpec::Iforest { n_trees, subsample, .. } => {
                if n_trees < 1 {
                    return invalid("n_trees must be at least 1".into());
                }
                if subsample < 2 {
                    return invalid("subsample must be at least 2".into());
                }
            }
            _ => {
                if self.k() == Some(0) {
                    return invalid("k must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = self.kind();
        match self {
            DetectorSpec::Ocsvm { nu, gamma, max_train, seed } => {
                write!(f, "{kind}(nu={nu};gamma={gamma}")?;
                if let Some(cap) = max_train {
                    write!(f, ";max_train={cap}")?;
                }
                write!(f, ";seed={seed})")
            }
            DetectorSpec::Iforest { n_trees, subsample, seed } => {
                write!(f, "{kind}(n_trees={n_trees};subsample={subsample};seed={seed})")
            }
            _ => write!(f, "{kind}(k={})", self.k().unwrap_or_default()),
        }
    }
}

impl FromStr for DetectorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = || Error::SpecParse(s.to_owned());
        let s = s.trim();
        let open = s.find('(').ok_or_else(err)?;
        let body = s[open + 1..].strip_suffix(')').ok_or_else(err)?;
        let kind: DetectorKind = s[..open].trim().parse().map_err(|_| err())?;
        let mut params = std::collections::BTreeMap::new();
        for pair in body.split(';').filter(|p| !p.trim().is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(err)?;
            if params.insert(key.trim().to_owned(), value.trim().to_owned()).is_some() {
                return Err(err());
            }
        }
        let mut take = |key: &str| params.remove(key);
        let spec = match kind {
            DetectorKind::Ocsvm => DetectorSpec::Ocsvm {
                nu: take("nu").ok_or_else(err)?.parse().map_err(|_| err())?,
                gamma: take("gamma").map(|g| g.parse()).transpose()?.unwrap_or_default(),
                max_train: take("max_train").map(|c| c.parse()).transpose().map_err(|_| err())?,
                seed: take("seed").map(|v| v.parse()).transpose().map_err(|_| err())?.unwrap_or(0),
            },
            DetectorKind::Iforest => DetectorSpec::Iforest {
                n_trees: take("n_trees").ok_or_else(err)?.parse().map_err(|_| err())?,
                subsample: take("subsample").map(|v| v.parse()).transpose().map_err(|_| err())?.unwrap_or(256),
                seed: take("seed").map(|v| v.parse()).transpose().map_err(|_| err())?.unwrap_or(0),
            },
            neighbor => {
                let k = take("k").ok_or_else(err)?.parse().map_err(|_| err())?;
                DetectorSpec::neighbor(neighbor, k).ok_or_else(err)?
            }
        };
        if !params.is_empty() {
            return Err(err());
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for DetectorSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DetectorSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// The default neighbor range: 1..=5 followed by 10, 15, ..., 100.
pub fn default_k_range() -> Vec<usize> {
    (1..=5).chain((10..=100).step_by(5)).collect()
}

/// Per-kind hyperparameter lists. An empty list disables that kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub knn_k: Vec<usize>,
    pub avg_knn_k: Vec<usize>,
    pub k_median_k: Vec<usize>,
    pub lof_k: Vec<usize>,
    pub loop_k: Vec<usize>,
    pub ocsvm_nu: Vec<f64>,
    pub ocsvm_gamma: GammaMode,
    pub ocsvm_max_train: Option<usize>,
    pub iforest_n_trees: Vec<usize>,
    pub iforest_subsample: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            knn_k: default_k_range(),
            avg_knn_k: default_k_range(),
            k_median_k: default_k_range(),
            lof_k: default_k_range(),
            loop_k: vec![1, 3, 5, 10],
            ocsvm_nu: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.5],
            ocsvm_gamma: GammaMode::Scale,
            ocsvm_max_train: None,
            iforest_n_trees: vec![10, 30, 50, 70, 100, 150, 200, 250],
            iforest_subsample: 256,
        }
    }
}

impl GridConfig {
    /// A grid with every kind disabled, to be filled in selectively.
    pub fn empty() -> Self {
        Self {
            knn_k: vec![],
            avg_knn_k: vec![],
            k_median_k: vec![],
            lof_k: vec![],
            loop_k: vec![],
            ocsvm_nu: vec![],
            iforest_n_trees: vec![],
            ..Self::default()
        }
    }
}

/// Expands the grid kind by kind in the order KNN, AVG_KNN, K_MEDIAN, LOF,
/// LOOP, OCSVM, IFOREST. Stochastic kinds get seeds derived from `master_seed`
/// and their deterministic hyperparameters, so a spec's seed does not depend
/// on its position in the grid.
pub fn build_grid(config: &GridConfig, master_seed: u64) -> Result<Vec<DetectorSpec>> {
    let mut specs = Vec::new();
    let neighbor_lists = [
        (DetectorKind::Knn, &config.knn_k),
        (DetectorKind::AvgKnn, &config.avg_knn_k),
        (DetectorKind::KMedian, &config.k_median_k),
        (DetectorKind::Lof, &config.lof_k),
        (DetectorKind::Loop, &config.loop_k),
    ];
    for (kind, ks) in neighbor_lists {
        specs.extend(ks.iter().filter_map(|&k| DetectorSpec::neighbor(kind, k)));
    }
    for &nu in &config.ocsvm_nu {
        let key = format!("OCSVM/nu={nu}/gamma={}", config.ocsvm_gamma);
        specs.push(DetectorSpec::Ocsvm {
            nu,
            gamma: config.ocsvm_gamma,
            max_train: config.ocsvm_max_train,
            seed: derive_seed(master_seed, &key),
        });
    }
    for &n_trees in &config.iforest_n_trees {
        let key = format!("IFOREST/n_trees={n_trees}/subsample={}", config.iforest_subsample);
        specs.push(DetectorSpec::Iforest {
            n_trees,
            subsample: config.iforest_subsample,
            seed: derive_seed(master_seed, &key),
        });
    }
    if specs.is_empty() {
        return Err(Error::InvalidArgument("detector grid is empty".into()));
    }
    for spec in &specs {
        spec.validate()?;
    }
    Ok(specs)
}

//! TOML run configuration shared by the experiment runner and the CLI.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::boost::BoostParams;
use crate::data::{generate_synthetic, load_csv, Dataset, Preset, SyntheticSpec, PRESETS};
use crate::detectors::GridConfig;
use crate::error::{Error, Result};
use crate::eval::experiment::Method;
use crate::seed::derive_seed;
use crate::selection::SelectionMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub trials: usize,
    pub train_fraction: f64,
    pub output_dir: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub datasets: Vec<DatasetConfig>,
    pub grid: GridConfig,
    pub boost: BoostParams,
    pub baseline: BaselineConfig,
    pub selection: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            trials: 30,
            train_fraction: 0.6,
            output_dir: None,
            methods: Method::ALL.to_vec(),
            datasets: Vec::new(),
            grid: GridConfig::default(),
            boost: BoostParams::default(),
            baseline: BaselineConfig::default(),
            selection: SweepConfig::default(),
        }
    }
}

/// One dataset entry. Exactly one of `preset`, `path` and `synthetic` is set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: Option<String>,
    pub preset: Option<String>,
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub outlier_fraction: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    pub informative_dims: Option<usize>,
}

fn default_separation() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub n_bags: usize,
    pub l1_strength: f64,
    pub l2_strength: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { n_bags: 50, l1_strength: 1.0, l2_strength: 1.0 }
    }
}

/// Experiment II sweep: every selection method is run at every p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<SelectionMethod>,
    pub p: Vec<PCount>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: vec![SelectionMethod::Random, SelectionMethod::Accurate, SelectionMethod::Balance],
            p: [0, 1, 2, 5, 10, 15, 20, 30, 50]
                .into_iter()
                .map(PCount::Count)
                .chain([PCount::All])
                .collect(),
        }
    }
}

/// A number of TOS to select, or every available column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PCount {
    Count(usize),
    All,
}

impl PCount {
    pub fn resolve(self, available: usize) -> usize {
        match self {
            PCount::Count(p) => p.min(available),
            PCount::All => available,
        }
    }
}

impl fmt::Display for PCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PCount::Count(p) => write!(f, "{p}"),
            PCount::All => f.write_str("all"),
        }
    }
}

impl std::str::FromStr for PCount {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(PCount::All);
        }
        s.parse()
            .map(PCount::Count)
            .map_err(|_| Error::InvalidArgument(format!("p must be a count or \"all\", got '{s}'")))
    }
}

impl Serialize for PCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PCount::Count(p) => s.serialize_u64(*p as u64),
            PCount::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for PCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct PVisitor;
        impl Visitor<'_> for PVisitor {
            type Value = PCount;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer or \"all\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<PCount, E> {
                Ok(PCount::Count(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<PCount, E> {
                usize::try_from(v).map(PCount::Count).map_err(|_| E::custom(format!("p must be >= 0, got {v}")))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<PCount, E> {
                v.parse().map_err(|e: Error| E::custom(e.to_string()))
            }
        }
        d.deserialize_any(PVisitor)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.trials == 0 {
            return fail("trials", "must be >= 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction", format!("must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.methods.is_empty() {
            return fail("methods", "at least one method is required".into());
        }
        if self.datasets.is_empty() {
            return fail("datasets", "at least one [[datasets]] entry is required".into());
        }
        for (i, ds) in self.datasets.iter().enumerate() {
            ds.validate().or_else(|e| fail(&format!("datasets[{i}]"), e))?;
        }
        let mut names: Vec<String> = self.datasets.iter().map(DatasetConfig::display_name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return fail("datasets", format!("duplicate dataset name '{}'", w[0]));
        }
        self.boost.validate().or_else(|e| fail("boost", e.to_string()))?;
        if self.baseline.n_bags == 0 {
            return fail("baseline.n_bags", "must be >= 1".into());
        }
        for (field, s) in [("baseline.l1_strength", self.baseline.l1_strength), ("baseline.l2_strength", self.baseline.l2_strength)] {
            if !(s > 0.0 && s.is_finite()) {
                return fail(field, format!("must be a finite value > 0, got {s}"));
            }
        }
        if self.selection.methods.iter().any(|m| !matches!(m, SelectionMethod::Random | SelectionMethod::Accurate | SelectionMethod::Balance)) {
            return fail("selection.methods", "only RANDOM, ACCURATE and BALANCE can be swept".into());
        }
        if let Err(e) = crate::detectors::build_grid(&self.grid, 0) {
            return fail("grid", e.to_string());
        }
        Ok(())
    }

    /// Loads every dataset. Relative CSV paths resolve against `base_dir`.
    pub fn load_datasets(&self, base_dir: &Path) -> Result<Vec<Dataset>> {
        self.datasets.iter().map(|d| d.load(base_dir, self.master_seed)).collect()
    }
}

impl DatasetConfig {
    pub fn preset(name: &str) -> Self {
        Self { preset: Some(name.to_string()), ..Self::default() }
    }

    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        if let Some(p) = &self.preset {
            return p.clone();
        }
        if let Some(p) = &self.path {
            return p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        }
        "synthetic".to_string()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let sources = [self.preset.is_some(), self.path.is_some(), self.synthetic.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err("set exactly one of `preset`, `path` or `synthetic`".into());
        }
        if let Some(p) = &self.preset {
            if Preset::by_name(p).is_none() {
                let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                return Err(format!("unknown preset '{p}' (known: {})", known.join(", ")));
            }
        }
        if let Some(s) = &self.synthetic {
            self.synthetic_spec(s, 0).validate().map_err(|e| format!("synthetic: {e}"))?;
        }
        Ok(())
    }

    fn synthetic_spec(&self, s: &SyntheticConfig, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n: s.n,
            d: s.d,
            outlier_fraction: s.outlier_fraction,
            separation: s.separation,
            informative_dims: s.informative_dims.unwrap_or(s.d),
            seed,
        }
    }

    /// Synthetic data is generated from a seed derived from the master seed
    /// and the dataset name, so it stays fixed across trials.
    pub fn load(&self, base_dir: &Path, master_seed: u64) -> Result<Dataset> {
        let name = self.display_name();
        let seed = derive_seed(master_seed, &format!("dataset/{name}"));
        if let Some(p) = &self.preset {
            let preset = Preset::by_name(p).ok_or_else(|| Error::Config(format!("unknown preset '{p}'")))?;
            return generate_synthetic(&preset.spec(seed), name);
        }
        if let Some(s) = &self.synthetic {
            return generate_synthetic(&self.synthetic_spec(s, seed), name);
        }
        let path = self.path.as_ref().ok_or_else(|| Error::Config("dataset has no source".into()))?;
        let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
        let label = self.label_column.as_deref().unwrap_or("label");
        let ds = load_csv(&path, Some(label))?;
        let features = ds.features().clone();
        Dataset::new(name, features, ds.labels().map(<[u8]>::to_vec), ds.feature_names().map(<[String]>::to_vec))
    }
}

//! Repeated-trial experiments over one or more datasets.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{precision_at_n, roc_auc};
use super::report::{summarize, ExperimentReport};
use crate::baselines::{easy_ensemble, Penalty, ProbabilisticModel};
use crate::boost::{predict_proba, train_gbt};
use crate::config::RunConfig;
use crate::data::{split_train_test, Dataset};
use crate::detectors::build_grid;
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::selection::{accurate_select, balance_select, combine_features, random_select, SelectionMethod, SelectionResult};
use crate::tos::{best_tos, build_tos, full_tos, Side, TosMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "Best_TOS")]
    BestTos,
    #[serde(rename = "Full_TOS")]
    FullTos,
    #[serde(rename = "L1_Comb")]
    L1Comb,
    #[serde(rename = "L2_Comb")]
    L2Comb,
    #[serde(rename = "XGB_Orig")]
    XgbOrig,
    #[serde(rename = "XGB_New")]
    XgbNew,
    #[serde(rename = "XGB_Comb")]
    XgbComb,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::BestTos,
        Method::FullTos,
        Method::L1Comb,
        Method::L2Comb,
        Method::XgbOrig,
        Method::XgbNew,
        Method::XgbComb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::BestTos => "Best_TOS",
            Method::FullTos => "Full_TOS",
            Method::L1Comb => "L1_Comb",
            Method::L2Comb => "L2_Comb",
            Method::XgbOrig => "XGB_Orig",
            Method::XgbNew => "XGB_New",
            Method::XgbComb => "XGB_Comb",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Framework comparison.
    Exp1,
    /// Framework comparison plus the selection-method × p sweep.
    Exp2,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp1" => Ok(Mode::Exp1),
            "exp2" => Ok(Mode::Exp2),
            _ => Err(Error::InvalidArgument(format!("unknown mode '{s}', expected exp1 or exp2"))),
        }
    }
}

/// Method label used for sweep rows; `selection` and `p` identify the cell.
pub const SWEEP_METHOD: &str = "XGB_Sel";

/// One method evaluated on the test side of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub dataset: String,
    pub trial: usize,
    pub seed: u64,
    pub method: String,
    pub selection: Option<SelectionMethod>,
    /// Requested selection size, a count or "all".
    pub p: Option<String>,
    /// Number of TOS actually selected.
    pub p_resolved: Option<usize>,
    pub roc: Option<f64>,
    pub p_at_n: Option<f64>,
    pub error: Option<String>,
    /// Excluded from serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Trial seed from the master seed, trial index and dataset name. Adding
/// methods or datasets never changes the splits of existing ones.
pub fn trial_seed(master_seed: u64, trial: usize, dataset: &str) -> u64 {
    derive_seed(master_seed, &format!("trial/{trial}/{dataset}"))
}

/// Runs every trial on every dataset and aggregates the results.
pub fn run_experiment(config: &RunConfig, datasets: &[Dataset], mode: Mode) -> Result<ExperimentReport> {
    config.validate()?;
    if datasets.is_empty() {
        return Err(Error::Config("datasets: nothing to run".into()));
    }
    for ds in datasets {
        ds.require_labels()?;
    }
    let jobs: Vec<(usize, usize)> = (0..datasets.len()).flat_map(|d| (0..config.trials).map(move |t| (d, t))).collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(d, t)| run_trial(config, &datasets[d], t, mode))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(summarize(config, datasets, mode, records))
}

struct TrialContext<'a> {
    dataset: &'a str,
    trial: usize,
    seed: u64,
}

impl TrialContext<'_> {
    fn record(&self, method: &str, outcome: std::result::Result<(f64, f64), String>, started: Instant) -> TrialRecord {
        let (roc, p_at_n, error) = match outcome {
            Ok((r, p)) => (Some(r), Some(p), None),
            Err(e) => {
                log::warn!("{} trial {} {method}: {e}", self.dataset, self.trial);
                (None, None, Some(e))
            }
        };
        TrialRecord {
            dataset: self.dataset.to_string(),
            trial: self.trial,
            seed: self.seed,
            method: method.to_string(),
            selection: None,
            p: None,
            p_resolved: None,
            roc,
            p_at_n,
            error,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }
}

fn evaluate(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    Ok((roc_auc(scores, labels)?, precision_at_n(scores, labels)?))
}


/// Runs one trial of one dataset. Failures are recorded per method.
pub fn run_trial(config: &RunConfig, ds: &Dataset, trial: usize, mode: Mode) -> Vec<TrialRecord> {
    let seed = trial_seed(config.master_seed, trial, ds.name());
    let ctx = TrialContext { dataset: ds.name(), trial, seed };
    let started = Instant::now();
    let split = split_train_test(ds, config.train_fraction, derive_seed(seed, "split"));
    let tos = split.as_ref().map_err(ToString::to_string).and_then(|(train, test)| {
        build_grid(&config.grid, derive_seed(seed, "grid"))
            .and_then(|specs| build_tos(&specs, train, test))
            .map_err(|e| e.to_string())
    });
    let tos_time = started.elapsed().as_secs_f64();
    let mut records = Vec::new();

    for &method in &config.methods {
        let started = Instant::now();
        let outcome = match (&split, &tos) {
            (Err(e), _) => Err(e.to_string()),
            (Ok((train, test)), tos) => run_method(config, method, train, test, tos.as_ref(), seed),
        };
        let mut rec = ctx.record(method.as_str(), outcome, started);
        if method != Method::XgbOrig {
            rec.wall_time += tos_time;
        }
        records.push(rec);
    }

    if mode == Mode::Exp2 {
        records.extend(run_sweep(config, &ctx, &split, &tos, tos_time));
    }
    records
}

fn run_method(
    config: &RunConfig,
    method: Method,
    train: &Dataset,
    test: &Dataset,
    tos: std::result::Result<&TosMatrix, &String>,
    seed: u64,
) -> std::result::Result<(f64, f64), String> {
    let run = |tos| method_scores(config, method, train, test, tos, seed).map_err(|e| e.to_string());
    match tos {
        Ok(tos) => run(Some(tos)),
        Err(_) if method == Method::XgbOrig => run(None),
        Err(e) => Err(e.clone()),
    }
}

fn method_scores(
    config: &RunConfig,
    method: Method,
    train: &Dataset,
    test: &Dataset,
    tos: Option<&TosMatrix>,
    seed: u64,
) -> Result<(f64, f64)> {
    let y_train = train.require_labels()?;
    let y_test = test.require_labels()?;
    if method == Method::XgbOrig {
        return xgb_scores(config, train.features(), y_train, test.features()).and_then(|s| evaluate(&s, y_test));
    }
    let tos = tos.expect("TOS available for TOS-based methods");
    let comb = || combine_features(train.features(), test.features(), tos, &SelectionResult::all(tos.n_columns()));
    let scores = match method {
        Method::BestTos => best_tos(tos, y_test, Side::Test)?.1,
        Method::FullTos => full_tos(tos).1,
        Method::L1Comb | Method::L2Comb => {
            let (penalty, strength) = if method == Method::L1Comb {
                (Penalty::L1, config.baseline.l1_strength)
            } else {
                (Penalty::L2, config.baseline.l2_strength)
            };
            let c = comb()?;
            let model = easy_ensemble(c.train.view(), y_train, config.baseline.n_bags, penalty, strength, derive_seed(seed, method.as_str()))?;
            model.predict_proba(c.test.view())?
        }
        Method::XgbNew => xgb_scores(config, tos.train_scores(), y_train, tos.test_scores())?,
        Method::XgbComb => {
            let c = comb()?;
            xgb_scores(config, &c.train, y_train, &c.test)?
        }
        Method::XgbOrig => unreachable!("handled above"),
    };
    evaluate(&scores, y_test)
}

fn xgb_scores(config: &RunConfig, train_x: &Array2<f64>, y: &[u8], test_x: &Array2<f64>) -> Result<Vec<f64>> {
    let model = train_gbt(train_x, y, &config.boost)?;
    predict_proba(&model, test_x.view())
}

/// Trains the boosted model on `[X, S]` for every selection method and p.
/// Selections are put in ascending column order before training, so p = 0
/// and p = k coincide with the original-feature and full combined models.
fn run_sweep(
    config: &RunConfig,
    ctx: &TrialContext<'_>,
    split: &Result<(Dataset, Dataset)>,
    tos: &std::result::Result<TosMatrix, String>,
    tos_time: f64,
) -> Vec<TrialRecord> {
    let mut cache: HashMap<Vec<usize>, std::result::Result<(f64, f64), String>> = HashMap::new();
    let mut records = Vec::new();
    for &method in &config.selection.methods {
        for &p in &config.selection.p {
            let started = Instant::now();
            let mut p_resolved = None;
            let outcome = match (split, tos) {
                (Err(e), _) => Err(e.to_string()),
                (_, Err(e)) => Err(e.clone()),
                (Ok((train, test)), Ok(tos)) => {
                    let k = p.resolve(tos.n_columns());
                    p_resolved = Some(k);
                    match select(method, tos, k, ctx.seed) {
                        Ok(sel) => {
                            let sel = sel.canonical();
                            cache
                                .entry(sel.indices.clone())
                                .or_insert_with(|| sweep_cell(config, train, test, tos, &sel).map_err(|e| e.to_string()))
                                .clone()
                        }
                        Err(e) => Err(e.to_string()),
                    }
                }
            };
            let mut rec = ctx.record(SWEEP_METHOD, outcome, started);
            rec.selection = Some(method);
            rec.p = Some(p.to_string());
            rec.p_resolved = p_resolved;
            rec.wall_time += tos_time;
            records.push(rec);
        }
    }
    records
}

fn select(method: SelectionMethod, tos: &TosMatrix, p: usize, seed: u64) -> Result<SelectionResult> {
    match method {
        SelectionMethod::Random => random_select(tos, p, derive_seed(seed, "select/RANDOM")),
        SelectionMethod::Accurate => accurate_select(tos, p),
        SelectionMethod::Balance => balance_select(tos, p),
        SelectionMethod::All => Ok(SelectionResult::all(tos.n_columns())),
        SelectionMethod::None => Ok(SelectionResult::none()),
    }
}

fn sweep_cell(config: &RunConfig, train: &Dataset, test: &Dataset, tos: &TosMatrix, sel: &SelectionResult) -> Result<(f64, f64)> {
    let c = combine_features(train.features(), test.features(), tos, sel)?;
    let scores = xgb_scores(config, &c.train, train.require_labels()?, &c.test)?;
    evaluate(&scores, test.require_labels()?)
}

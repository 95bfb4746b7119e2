//! TOS selection and construction of the combined feature space.

use ndarray::{concatenate, Array2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::tos::TosMatrix;

/// Lower bound on Σ|ρ| in the discounted accuracy, keeping it finite for a
/// candidate uncorrelated with everything selected so far.
pub const PSI_DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SelectionMethod {
    Random,
    Accurate,
    Balance,
    All,
    None,
}

impl SelectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::Random => "RANDOM",
            SelectionMethod::Accurate => "ACCURATE",
            SelectionMethod::Balance => "BALANCE",
            SelectionMethod::All => "ALL",
            SelectionMethod::None => "NONE",
        }
    }
}

impl std::fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SelectionMethod::Random,
            SelectionMethod::Accurate,
            SelectionMethod::Balance,
            SelectionMethod::All,
            SelectionMethod::None,
        ]
        .into_iter()
        .find(|m| m.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown selection method {s:?}")))
    }
}

/// One greedy step: chosen column, its accuracy and (for balance) its
/// discounted accuracy at the time it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub index: usize,
    pub acc: f64,
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub method: SelectionMethod,
    pub trace: Vec<SelectionStep>,
}

impl SelectionResult {
    pub fn none() -> Self {
        Self { indices: Vec::new(), method: SelectionMethod::None, trace: Vec::new() }
    }

    pub fn all(k: usize) -> Self {
        Self { indices: (0..k).collect(), method: SelectionMethod::All, trace: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The same set with indices in ascending order.
    pub fn canonical(&self) -> Self {
        let mut indices = self.indices.clone();
        indices.sort_unstable();
        Self { indices, method: self.method, trace: self.trace.clone() }
    }
}

/// Sample Pearson correlation; 0 when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 values".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn check_p(tos: &TosMatrix, p: usize) -> Result<()> {
    if p > tos.n_columns() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {p} of {} TOS columns",
            tos.n_columns()
        )));
    }
    Ok(())
}

/// p distinct columns drawn uniformly without replacement.
pub fn random_select(tos: &TosMatrix, p: usize, seed: u64) -> Result<SelectionResult> {
    check_p(tos, p)?;
    let indices = sample(&mut rng_from_seed(seed), tos.n_columns(), p).into_vec();
    Ok(SelectionResult { indices, method: SelectionMethod::Random, trace: Vec::new() })
}

/// Index of the maximum, lowest index on ties.
fn argmax(values: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    values.fold(None, |best, (i, v)| match best {
        Some((_, bv)) if v <= bv => best,
        _ => Some((i, v)),
    })
}

/// The p columns with the highest training ROC, in descending order.
pub fn accurate_select(tos: &TosMatrix, p: usize) -> Result<SelectionResult> {
    check_p(tos, p)?;
    let acc = tos.train_roc();
    let mut order: Vec<usize> = (0..acc.len()).collect();
    order.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]).then(a.cmp(&b)));
    order.truncate(p);
    let trace = order
        .iter()
        .map(|&i| SelectionStep { index: i, acc: acc[i], psi: None })
        .collect();
    Ok(SelectionResult { indices: order, method: SelectionMethod::Accurate, trace })
}

/// Greedy selection balancing accuracy and diversity: start from the most
/// accurate column, then repeatedly add the candidate maximizing
/// Ψ = ACC / Σ_{j∈S} |ρ(candidate, j)| on training scores.
pub fn balance_select(tos: &TosMatrix, p: usize) -> Result<SelectionResult> {
    check_p(tos, p)?;
    let acc = tos.train_roc();
    let k = acc.len();
    let mut result = SelectionResult { indices: Vec::new(), method: SelectionMethod::Balance, trace: Vec::new() };
    if p == 0 {
        return Ok(result);
    }
    let columns: Vec<Vec<f64>> = (0..k).map(|j| tos.train_column(j)).collect();
    let mut remaining = vec![true; k];
    // Running Σ|ρ| between each candidate and the selected set.
    let mut corr_sum = vec![0.0; k];

    let mut add = |index: usize, psi: Option<f64>, remaining: &mut Vec<bool>, corr_sum: &mut Vec<f64>| -> Result<()> {
        remaining[index] = false;
        result.indices.push(index);
        result.trace.push(SelectionStep { index, acc: acc[index], psi });
        for j in (0..k).filter(|&j| remaining[j]) {
            corr_sum[j] += pearson(&columns[j], &columns[index])?.abs();
        }
        Ok(())
    };

    let (first, _) = argmax(acc.iter().copied().enumerate()).expect("non-empty matrix");
    add(first, None, &mut remaining, &mut corr_sum)?;
    while result_len(&remaining, k) < p {
        let (next, psi) = argmax(
            (0..k)
                .filter(|&j| remaining[j])
                .map(|j| (j, acc[j] / corr_sum[j].max(PSI_DENOMINATOR_FLOOR))),
        )
        .expect("candidates remain while |S| < p <= k");
        add(next, Some(psi), &mut remaining, &mut corr_sum)?;
    }
    Ok(result)
}

fn result_len(remaining: &[bool], k: usize) -> usize {
    k - remaining.iter().filter(|&&r| r).count()
}

/// Original features followed by the selected TOS columns, in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedFeatureSpace {
    pub train: Array2<f64>,
    pub test: Array2<f64>,
    pub d_original: usize,
    pub selected: SelectionResult,
}

impl CombinedFeatureSpace {
    pub fn width(&self) -> usize {
        self.train.ncols()
    }
}

/// Concatenates `[X, S]` for both sides without rescaling either block.
pub fn combine_features(
    train_x: &Array2<f64>,
    test_x: &Array2<f64>,
    tos: &TosMatrix,
    selection: &SelectionResult,
) -> Result<CombinedFeatureSpace> {
    for (x, s) in [(train_x, tos.train_scores()), (test_x, tos.test_scores())] {
        if x.nrows() != s.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), actual: s.nrows() });
        }
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::DimensionMismatch { expected: train_x.ncols(), actual: test_x.ncols() });
    }
    if let Some(&bad) = selection.indices.iter().find(|&&j| j >= tos.n_columns()) {
        return Err(Error::InvalidArgument(format!("selected column {bad} out of range")));
    }
    let pick = |x: &Array2<f64>, s: &Array2<f64>| -> Array2<f64> {
        let chosen = s.select(Axis(1), &selection.indices);
        concatenate(Axis(1), &[x.view(), chosen.view()]).expect("row counts checked")
    };
    Ok(CombinedFeatureSpace {
        train: pick(train_x, tos.train_scores()),
        test: pick(test_x, tos.test_scores()),
        d_original: train_x.ncols(),
        selected: selection.clone(),
    })
}

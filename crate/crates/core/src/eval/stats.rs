//! Nonparametric tests for comparing methods across datasets and trials.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::metrics::average_ranks;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub p_value: f64,
    pub dof: usize,
}

/// Friedman test on a methods × datasets table where higher is better.
///
/// Methods are ranked within each dataset (average ranks on ties) and
/// χ² = 12/(n·k·(k+1)) · Σ R_j² − 3n(k+1) is referred to χ²(k−1).
pub fn friedman_test(table: &[Vec<f64>]) -> Result<FriedmanResult> {
    let k = table.len();
    let n = table.first().map_or(0, Vec::len);
    if k < 2 || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "Friedman test needs at least 2 methods and 2 datasets, got {k}x{n}"
        )));
    }
    if table.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument("ragged metric table".into()));
    }
    let mut rank_sums = vec![0.0; k];
    for dataset in 0..n {
        // Negate so that the best value receives rank 1.
        let column: Vec<f64> = table.iter().map(|row| -row[dataset]).collect();
        for (sum, r) in rank_sums.iter_mut().zip(average_ranks(&column)) {
            *sum += r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let chi2 = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>()
        - 3.0 * nf * (kf + 1.0);
    // Rounding can leave a tiny negative value when every rank ties.
    let chi2 = chi2.max(0.0);
    let dist = ChiSquared::new(kf - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(FriedmanResult {
        chi2,
        p_value: dist.sf(chi2),
        dof: k - 1,
    })
}

/// Mean Friedman rank per method (rank 1 = best).
pub fn mean_ranks(table: &[Vec<f64>]) -> Vec<f64> {
    let k = table.len();
    let n = table.first().map_or(0, Vec::len);
    let mut sums = vec![0.0; k];
    for dataset in 0..n {
        let column: Vec<f64> = table.iter().map(|row| -row[dataset]).collect();
        for (s, r) in sums.iter_mut().zip(average_ranks(&column)) {
            *s += r;
        }
    }
    sums.into_iter().map(|s| s / n.max(1) as f64).collect()
}

/// Two-tailed Nemenyi critical values q_0.05 for k = 2..=10 methods
/// (studentized range quantiles divided by √2).
const NEMENYI_Q05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];

/// Nemenyi critical difference of mean ranks, CD = q_α(k) · √(k(k+1)/(6n)).
pub fn nemenyi_cd(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if alpha != 0.05 {
        return Err(Error::InvalidArgument(format!("only alpha = 0.05 is tabulated, got {alpha}")));
    }
    if !(2..=10).contains(&k) {
        return Err(Error::InvalidArgument(format!("Nemenyi table covers 2..=10 methods, got {k}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one dataset".into()));
    }
    let (k, n) = (k as f64, n as f64);
    Ok(NEMENYI_Q05[k as usize - 2] * (k * (k + 1.0) / (6.0 * n)).sqrt())
}

/// Samples up to this combined size use exact permutation enumeration.
pub const WILCOXON_EXACT_MAX: usize = 12;

fn rank_sum_setup(a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    (ranks, w)
}

/// Two-sided Wilcoxon rank-sum p-value by exact enumeration of every
/// assignment of the pooled (mid)ranks to the first sample.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let (ranks, w) = rank_sum_setup(a, b);
    let (m, total) = (a.len(), ranks.len());
    let expected = m as f64 * (total as f64 + 1.0) / 2.0;
    let observed = (w - expected).abs();
    let (mut extreme, mut count) = (0u64, 0u64);
    // Walk every m-subset of the pooled ranks.
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let s: f64 = idx.iter().map(|&i| ranks[i]).sum();
        count += 1;
        if (s - expected).abs() >= observed - 1e-9 {
            extreme += 1;
        }
        let mut pos = m;
        loop {
            if pos == 0 {
                return Ok(extreme as f64 / count as f64);
            }
            pos -= 1;
            if idx[pos] < total - m + pos {
                break;
            }
        }
        idx[pos] += 1;
        for q in pos + 1..m {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Two-sided Wilcoxon rank-sum p-value from the normal approximation with
/// tie-corrected variance and a continuity correction.
pub fn wilcoxon_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let (ranks, w) = rank_sum_setup(a, b);
    let (m, n) = (a.len() as f64, b.len() as f64);
    let total = m + n;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let end = sorted[start..].iter().take_while(|&&r| r == sorted[start]).count() + start;
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    let var = m * n / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let expected = m * (total + 1.0) / 2.0;
    let z = ((w - expected).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok((2.0 * normal.sf(z)).min(1.0))
}

/// Two-sided Wilcoxon rank-sum test: exact when |a|+|b| ≤ 12, otherwise the
/// normal approximation.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() + b.len() <= WILCOXON_EXACT_MAX {
        wilcoxon_exact(a, b)
    } else {
        wilcoxon_normal(a, b)
    }
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("rank-sum test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("rank-sum test needs finite values".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn friedman_fixed_order() {
        // Three methods, four datasets, method 0 always best.
        let table = vec![vec![0.9; 4], vec![0.8; 4], vec![0.7; 4]];
        let r = friedman_test(&table).unwrap();
        assert!((r.chi2 - 8.0).abs() < 1e-12);
        assert!((r.p_value - (-4.0f64).exp()).abs() < 1e-12);
        assert_eq!(mean_ranks(&table), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn friedman_all_tied() {
        let r = friedman_test(&[vec![0.5; 5], vec![0.5; 5], vec![0.5; 5]]).unwrap();
        assert_eq!(r.chi2, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(friedman_test(&[vec![0.5, 0.6]]).is_err());
        assert!(friedman_test(&[vec![0.5], vec![0.6]]).is_err());
    }

    #[test]
    fn nemenyi_values() {
        assert!((nemenyi_cd(2, 9, 0.05).unwrap() - 1.960 / 3.0).abs() < 1e-12);
        let cd = nemenyi_cd(7, 7, 0.05).unwrap();
        assert!((cd - 2.949 * (56.0f64 / 42.0).sqrt()).abs() < 1e-12);
        assert!((cd - 3.405).abs() < 1e-3);
        assert!(nemenyi_cd(7, 1_000_000, 0.05).unwrap() < 0.01);
        assert!(nemenyi_cd(11, 5, 0.05).is_err());
        assert!(nemenyi_cd(3, 5, 0.01).is_err());
    }

    #[test]
    fn wilcoxon_small_examples() {
        assert!((wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((wilcoxon_rank_sum(&[1.0, 2.0, 5.0], &[5.0, 2.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
    }

    #[test]
    fn wilcoxon_large_shift_is_significant() {
        let a: Vec<f64> = (0..20).map(|i| 100.0 + f64::from(i)).collect();
        let b: Vec<f64> = (0..20).map(f64::from).collect();
        assert!(wilcoxon_rank_sum(&a, &b).unwrap() < 0.001);
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! Run with `cargo test -p xgbod --test acceptance -- --nocapture` (output is
//! printed regardless; the flag only matters under the default harness).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use xgbod::boost::{find_best_split, logistic_grad_hess, logistic_loss, presort, sigmoid, train_gbt_with_trace, BoostParams};
use xgbod::config::{DatasetConfig, PCount, RunConfig};
use xgbod::data::{generate_synthetic, Dataset, SyntheticSpec, PRESETS};
use xgbod::detectors::{fit_detector, DetectorSpec, GammaMode, GridConfig};
use xgbod::eval::stats::wilcoxon_exact;
use xgbod::eval::{friedman_test, precision_at_n, roc_auc, run_experiment, ExperimentReport, Method, Mode};
use xgbod::seed::rng_from_seed;
use xgbod::selection::{accurate_select, balance_select, pearson, SelectionMethod, PSI_DENOMINATOR_FLOOR};
use xgbod::tos::TosMatrix;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, id: &str, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {:.1} s, budget {:.0} s", elapsed.as_secs_f64(), b.as_secs_f64())),
            (o, _) => o,
        };
        let tag = match &outcome {
            Ok(d) if d.starts_with("SKIP") => "SKIP",
            Ok(_) => "PASS",
            Err(_) => {
                self.failed += 1;
                "FAIL"
            }
        };
        let detail = match outcome {
            Ok(d) | Err(d) => d,
        };
        println!("{tag} [{id}] {name} ({:.2} s): {detail}", elapsed.as_secs_f64());
    }
}

fn main() {
    let mut suite = Suite { failed: 0 };
    suite.run("1", "metric oracle equivalence", Some(Duration::from_secs(5)), metric_oracle);
    suite.run("2", "detector oracle equivalence", Some(Duration::from_secs(30)), detector_oracle);
    suite.run("3", "selection correctness", None, selection_fixture);
    suite.run("4", "boosting numerics", None, boosting_numerics);
    suite.run("5", "statistical tests", None, statistical_tests);
    suite.run("7", "experiment II equivalences", None, exp2_equivalences);
    suite.run("8", "optional ODDS stretch check", None, odds_stretch);
    suite.run("9", "determinism across worker counts", None, determinism);
    suite.run("6", "end-to-end desk-scale comparison", Some(Duration::from_secs(600)), end_to_end);
    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}

// ---------------------------------------------------------------- metrics

fn roc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Picks the highest remaining score (lowest index on ties) n times.
fn p_at_n_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let n = labels.iter().filter(|&&l| l == 1).count();
    let mut taken = vec![false; scores.len()];
    let mut hits = 0;
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if !taken[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        hits += usize::from(labels[b] == 1);
    }
    hits as f64 / n as f64
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
    labels[0] = 1;
    labels[n - 1] = 0;
    labels
}

fn metric_oracle() -> Check {
    let mut rng = rng_from_seed(101);
    let mut worst: f64 = 0.0;
    let mut tied = 0;
    for instance in 0..200 {
        let n = rng.random_range(2..=50);
        let labels = random_labels(&mut rng, n);
        let scores: Vec<f64> = if instance % 2 == 0 {
            (0..n).map(|_| rng.random_range(0..5) as f64).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>()).collect()
        };
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        tied += usize::from(sorted.windows(2).any(|w| w[0] == w[1]));
        let roc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let diff = (roc - roc_oracle(&scores, &labels)).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("instance {instance}: roc differs by {diff:e}"))?;
        let p = precision_at_n(&scores, &labels).map_err(|e| e.to_string())?;
        let expected = p_at_n_oracle(&scores, &labels);
        ensure(p == expected, || format!("instance {instance}: P@N {p} vs {expected}"))?;
    }
    Ok(format!("200 instances ({tied} with tied scores), max |roc diff| {worst:.1e}, P@N exact"))
}

// ---------------------------------------------------------------- detectors

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The k nearest training rows of `q` by exhaustive search, ties to the lower
/// index, skipping `exclude`.
fn knn_oracle(train: &Array2<f64>, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = (0..train.nrows())
        .filter(|&i| Some(i) != exclude)
        .map(|i| (distance(train.row(i).as_slice().unwrap(), q), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all
}

#[derive(Clone, Copy)]
enum OracleKind {
    Knn,
    Avg,
    Median,
    Lof,
}

fn oracle_scores(kind: OracleKind, train: &Array2<f64>, queries: &Array2<f64>, k: usize, self_exclude: bool) -> Vec<f64> {
    let n = train.nrows();
    let neighbors = |q: &[f64], excl: Option<usize>| knn_oracle(train, q, k, excl);
    let train_nbrs: Vec<Vec<(f64, usize)>> = (0..n).map(|i| neighbors(train.row(i).as_slice().unwrap(), Some(i))).collect();
    let kdist: Vec<f64> = train_nbrs.iter().map(|v| v[k - 1].0).collect();
    let lrd = |nb: &[(f64, usize)]| {
        let reach: f64 = nb.iter().map(|&(d, o)| d.max(kdist[o])).sum::<f64>() / k as f64;
        1.0 / (reach + 1e-10)
    };
    let train_lrd: Vec<f64> = train_nbrs.iter().map(|nb| lrd(nb)).collect();
    (0..queries.nrows())
        .map(|r| {
            let nb = neighbors(queries.row(r).as_slice().unwrap(), self_exclude.then_some(r));
            let d: Vec<f64> = nb.iter().map(|x| x.0).collect();
            match kind {
                OracleKind::Knn => d[k - 1],
                OracleKind::Avg => d.iter().sum::<f64>() / k as f64,
                OracleKind::Median => {
                    if k % 2 == 1 {
                        d[k / 2]
                    } else {
                        (d[k / 2 - 1] + d[k / 2]) / 2.0
                    }
                }
                OracleKind::Lof => nb.iter().map(|&(_, o)| train_lrd[o]).sum::<f64>() / k as f64 / lrd(&nb),
            }
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
}

fn fitted_scores(spec: &DetectorSpec, train: &Array2<f64>, queries: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>), String> {
    let ds = Dataset::new("fixture", train.clone(), None, None).map_err(|e| e.to_string())?;
    let det = fit_detector(spec, &ds)
        .map_err(|e| e.to_string())?
        .fitted()
        .ok_or_else(|| format!("{spec} was skipped"))?;
    let test = det.score_points(queries.view()).map_err(|e| e.to_string())?;
    Ok((det.train_scores().to_vec(), test))
}

fn detector_oracle() -> Check {
    let mut rng = rng_from_seed(202);
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        let n = rng.random_range(12..=200);
        let d = rng.random_range(1..=10);
        let k = rng.random_range(1..=10.min(n - 1));
        let train = uniform(&mut rng, n, d);
        let n_queries = rng.random_range(1..=20);
        let queries = uniform(&mut rng, n_queries, d);
        for (kind, spec) in [
            (OracleKind::Knn, DetectorSpec::Knn { k }),
            (OracleKind::Avg, DetectorSpec::AvgKnn { k }),
            (OracleKind::Median, DetectorSpec::KMedian { k }),
            (OracleKind::Lof, DetectorSpec::Lof { k }),
        ] {
            let (got_train, got_test) = fitted_scores(&spec, &train, &queries)?;
            let want_train = oracle_scores(kind, &train, &train, k, true);
            let want_test = oracle_scores(kind, &train, &queries, k, false);
            for (side, got, want) in [("train", &got_train, &want_train), ("test", &got_test, &want_test)] {
                for (i, (g, w)) in got.iter().zip(want).enumerate() {
                    worst = worst.max((g - w).abs() / w.abs().max(1.0));
                    ensure(close(*g, *w, 1e-9), || {
                        format!("instance {instance} (n={n} d={d}) {spec} {side} row {i}: {g} vs oracle {w}")
                    })?;
                }
            }
        }
    }

    // Uniform grid: LOF of interior points.
    let side = 21;
    let grid = Array2::from_shape_fn((side * side, 2), |(i, j)| if j == 0 { (i / side) as f64 } else { (i % side) as f64 });
    let margin = 3;
    let mut lof_dev: f64 = 0.0;
    for k in [4, 8] {
        let (scores, _) = fitted_scores(&DetectorSpec::Lof { k }, &grid, &grid.slice(ndarray::s![0..1, ..]).to_owned())?;
        for (i, s) in scores.iter().enumerate() {
            let (r, c) = (i / side, i % side);
            if r >= margin && c >= margin && r < side - margin && c < side - margin {
                lof_dev = lof_dev.max((s - 1.0).abs());
            }
        }
    }
    ensure(lof_dev <= 0.05, || format!("interior grid LOF deviates from 1 by {lof_dev}"))?;

    // Planted outlier at separation 6.
    let planted = generate_synthetic(
        &SyntheticSpec { n: 200, d: 2, outlier_fraction: 0.0075, separation: 6.0, informative_dims: 2, seed: 3 },
        "planted",
    )
    .map_err(|e| e.to_string())?;
    let labels = planted.labels().unwrap();
    let outlier = labels.iter().position(|&l| l == 1).unwrap();
    let specs = [
        DetectorSpec::Knn { k: 5 },
        DetectorSpec::AvgKnn { k: 5 },
        DetectorSpec::KMedian { k: 5 },
        DetectorSpec::Lof { k: 10 },
        DetectorSpec::Loop { k: 10 },
        DetectorSpec::Ocsvm { nu: 0.1, gamma: GammaMode::Scale, max_train: None, seed: 1 },
        DetectorSpec::Iforest { n_trees: 100, subsample: 128, seed: 1 },
    ];
    for spec in &specs {
        let (scores, _) = fitted_scores(spec, planted.features(), &planted.features().slice(ndarray::s![0..1, ..]).to_owned())?;
        let top = scores[outlier];
        let runner_up = scores.iter().enumerate().filter(|&(i, _)| i != outlier).map(|(_, &s)| s).fold(f64::NEG_INFINITY, f64::max);
        ensure(top > runner_up, || format!("{spec}: planted outlier scores {top}, another point {runner_up}"))?;
    }
    Ok(format!(
        "50 instances x 4 kinds, max rel diff {worst:.1e}; interior grid |LOF-1| <= {lof_dev:.1e}; planted outlier is the strict argmax under all 7 kinds"
    ))
}

// ---------------------------------------------------------------- selection

fn concordant_x2(scores: &[f64], labels: &[u8]) -> i64 {
    (roc_oracle(scores, labels) * 2.0 * count_pairs(labels) as f64).round() as i64
}

fn count_pairs(labels: &[u8]) -> usize {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    pos * (labels.len() - pos)
}

/// Swaps values of adjacent (outlier, inlier) pairs in score order until the
/// number of concordant pairs equals `target`.
fn force_concordance(mut s: Vec<f64>, labels: &[u8], target: usize) -> Vec<f64> {
    loop {
        let c = concordant_x2(&s, labels);
        if c == 2 * target as i64 {
            return s;
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
        let raise = c < 2 * target as i64;
        let (a, b) = order
            .windows(2)
            .map(|w| (w[0], w[1]))
            .find(|&(a, b)| if raise { labels[a] == 1 && labels[b] == 0 } else { labels[a] == 0 && labels[b] == 1 })
            .expect("an adjacent pair to swap");
        s.swap(a, b);
    }
}

/// T1 with ROC 0.95, T2 an exact copy, T3 with ROC 0.80 and ρ(T1, T3) = 0.1.
/// T3 = W + t·T1 with t found by bisection; seeds are tried until the shift
/// leaves the outlier/inlier order of W intact.
fn selection_columns() -> (Vec<Vec<f64>>, Vec<u8>) {
    let labels: Vec<u8> = (0..30).map(|i| u8::from(i < 10)).collect();
    let pairs = count_pairs(&labels);
    for seed in 0..10_000u64 {
        let mut rng = rng_from_seed(seed);
        let mut noise = |shift: f64| -> Vec<f64> {
            labels.iter().map(|&l| f64::from(l) * shift + rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let t1 = force_concordance(noise(2.5), &labels, pairs * 95 / 100);
        let w = force_concordance(noise(1.2), &labels, pairs * 80 / 100);
        let rho_at = |t: f64| {
            let t3: Vec<f64> = w.iter().zip(&t1).map(|(a, b)| a + t * b).collect();
            pearson(&t3, &t1).unwrap()
        };
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rho_at(mid) < 0.1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = if (rho_at(lo) - 0.1).abs() <= (rho_at(hi) - 0.1).abs() { lo } else { hi };
        let t3: Vec<f64> = w.iter().zip(&t1).map(|(a, b)| a + t * b).collect();
        if concordant_x2(&t3, &labels) == 2 * (pairs * 80 / 100) as i64 {
            return (vec![t1.clone(), t1, t3], labels);
        }
    }
    panic!("no selection fixture found");
}

fn selection_fixture() -> Check {
    let (cols, labels) = selection_columns();
    let n = labels.len();
    let m = Array2::from_shape_fn((n, 3), |(i, j)| cols[j][i]);
    let tos = TosMatrix::from_columns(m.clone(), m, vec![DetectorSpec::Knn { k: 1 }; 3], &labels).map_err(|e| e.to_string())?;
    let acc = tos.train_roc().to_vec();
    let rho13 = pearson(&cols[0], &cols[2]).unwrap();
    ensure(acc[0] == 0.95 && acc[1] == 0.95 && acc[2] == 0.80, || format!("fixture ACC {acc:?}"))?;
    ensure((rho13.abs() - 0.1).abs() < 1e-12, || format!("fixture rho(T1,T3) = {rho13}"))?;

    let balance = balance_select(&tos, 2).map_err(|e| e.to_string())?;
    let accurate = accurate_select(&tos, 2).map_err(|e| e.to_string())?;
    ensure(balance.indices == [0, 2], || format!("balance picked {:?}", balance.indices))?;
    ensure(accurate.indices == [0, 1], || format!("accurate picked {:?}", accurate.indices))?;
    let psi_t3 = balance.trace[1].psi.ok_or("no psi recorded for step 2")?;
    let psi_t2 = acc[1] / pearson(&cols[1], &cols[0]).unwrap().abs().max(PSI_DENOMINATOR_FLOOR);
    ensure((psi_t3 - 8.0).abs() < 1e-9, || format!("step-2 psi(T3) = {psi_t3}"))?;
    ensure((psi_t2 - 0.95).abs() < 1e-12, || format!("step-2 psi(T2) = {psi_t2}"))?;

    let b1 = balance_select(&tos, 1).map_err(|e| e.to_string())?;
    let a1 = accurate_select(&tos, 1).map_err(|e| e.to_string())?;
    ensure(b1.indices == a1.indices, || format!("p=1: balance {:?}, accurate {:?}", b1.indices, a1.indices))?;
    Ok(format!(
        "balance {:?}, accurate {:?}; step-2 psi T2 {psi_t2:.4} vs T3 {psi_t3:.4}; p=1 both {:?}",
        balance.indices, accurate.indices, b1.indices
    ))
}

// ---------------------------------------------------------------- boosting

fn boosting_numerics() -> Check {
    let mut rng = rng_from_seed(404);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m: f64 = rng.random_range(-10.0..10.0);
        let y = f64::from(u8::from(rng.random_bool(0.5)));
        let (g, h) = logistic_grad_hess(sigmoid(m), y);
        let g_fd = (logistic_loss(m + eps, y) - logistic_loss(m - eps, y)) / (2.0 * eps);
        let g_at = |m: f64| logistic_grad_hess(sigmoid(m), y).0;
        let h_fd = (g_at(m + eps) - g_at(m - eps)) / (2.0 * eps);
        worst = worst.max((g - g_fd).abs()).max((h - h_fd).abs());
        ensure((g - g_fd).abs() <= 1e-6 && (h - h_fd).abs() <= 1e-6, || {
            format!("m={m} y={y}: g {g} vs {g_fd}, h {h} vs {h_fd}")
        })?;
    }

    let params = BoostParams::default();
    let mut rounds = 0;
    for preset in PRESETS {
        let ds = preset.generate(17).map_err(|e| e.to_string())?;
        let (_, trace) = train_gbt_with_trace(ds.features(), ds.labels().unwrap(), &params).map_err(|e| e.to_string())?;
        for (t, w) in trace.log_loss.windows(2).enumerate() {
            ensure(w[1] <= w[0] + 1e-9, || format!("{}: loss rose at round {} ({} -> {})", preset.name, t + 1, w[0], w[1]))?;
        }
        rounds += trace.log_loss.len();
    }

    for instance in 0..30 {
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=3);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(0..4) as f64);
        // Dyadic gradients and hessians keep every partial sum exact.
        let grad: Vec<f64> = (0..n).map(|_| rng.random_range(-8..=8) as f64 / 8.0).collect();
        let hess: Vec<f64> = (0..n).map(|_| rng.random_range(1..=8) as f64 / 8.0).collect();
        let params = BoostParams {
            lambda: [0.0, 0.5, 1.0][instance % 3],
            gamma: [0.0, 0.125][instance % 2],
            min_child_weight: [0.0, 0.25, 1.0][(instance / 3) % 3],
            ..BoostParams::default()
        };
        let got = find_best_split(&x, &presort(&x), &grad, &hess, &params).map(|c| (c.feature, c.threshold, c.gain));
        let want = brute_force_split(&x, &grad, &hess, &params);
        let same = match (got, want) {
            (None, None) => true,
            (Some(a), Some(b)) => a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() <= 1e-12,
            _ => false,
        };
        ensure(same, || format!("instance {instance}: split {got:?} vs brute force {want:?}"))?;
    }
    Ok(format!(
        "g/h within {worst:.1e} of finite differences; {rounds} rounds nonincreasing over {} presets; 30 split instances match",
        PRESETS.len()
    ))
}

/// Every (feature, midpoint-threshold) pair scored from scratch; ties go to
/// the lower feature, then the lower threshold.
fn brute_force_split(x: &Array2<f64>, grad: &[f64], hess: &[f64], p: &BoostParams) -> Option<(usize, f64, f64)> {
    let (n, d) = x.dim();
    let score = |g: f64, h: f64| g * g / (h + p.lambda);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..d {
        let mut values: Vec<f64> = (0..n).map(|i| x[[i, f]]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if x[[i, f]] < t {
                    gl += grad[i];
                    hl += hess[i];
                } else {
                    gr += grad[i];
                    hr += hess[i];
                }
            }
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - p.gamma;
            if gain > 0.0 && best.is_none_or(|b| gain > b.2) {
                best = Some((f, t, gain));
            }
        }
    }
    best
}

// ---------------------------------------------------------------- statistics

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Reads a datasets × methods CSV (comment lines start with '#') and returns
/// the methods × datasets table.
fn read_table(name: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(fixture_path(name))
        .map_err(|e| format!("{name}: {e}"))?;
    let k = reader.headers().map_err(|e| e.to_string())?.len() - 1;
    let mut table = vec![Vec::new(); k];
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        for (j, col) in table.iter_mut().enumerate() {
            col.push(row[j + 1].parse::<f64>().map_err(|e| e.to_string())?);
        }
    }
    Ok(table)
}

fn statistical_tests() -> Check {
    let hand = vec![vec![0.9; 4], vec![0.8; 4], vec![0.7; 4]];
    let fr = friedman_test(&hand).map_err(|e| e.to_string())?;
    ensure((fr.chi2 - 8.0).abs() < 1e-12, || format!("hand example chi2 = {}", fr.chi2))?;
    ensure((fr.p_value - (-4.0f64).exp()).abs() < 1e-12, || format!("hand example p = {}", fr.p_value))?;

    let w = wilcoxon_exact(&[1.0, 2.0], &[3.0, 4.0]).map_err(|e| e.to_string())?;
    let w_dispatch = xgbod::eval::wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0]).map_err(|e| e.to_string())?;
    ensure((w - 1.0 / 3.0).abs() < 1e-12 && w == w_dispatch, || format!("rank-sum p = {w} / {w_dispatch}"))?;

    let roc = friedman_test(&read_table("table2_roc.csv")?).map_err(|e| e.to_string())?;
    let pn = friedman_test(&read_table("table2_pn.csv")?).map_err(|e| e.to_string())?;
    ensure((roc.chi2 - 32.45).abs() <= 0.5, || format!("Table II ROC chi2 = {}", roc.chi2))?;
    ensure((pn.chi2 - 32.88).abs() <= 0.5, || format!("Table II P@N chi2 = {}", pn.chi2))?;
    Ok(format!(
        "hand chi2 {:.3} p {:.4}; rank-sum p {w:.4}; Table II chi2 ROC {:.2} (p {:.1e}), P@N {:.2} (p {:.1e})",
        fr.chi2, fr.p_value, roc.chi2, roc.p_value, pn.chi2, pn.p_value
    ))
}

// ---------------------------------------------------------------- experiments

fn reduced_grid() -> GridConfig {
    GridConfig {
        knn_k: vec![1, 5, 10, 20, 50],
        avg_knn_k: vec![5, 10, 20, 50],
        k_median_k: vec![5, 10, 20, 50],
        lof_k: vec![5, 10, 20, 35, 50],
        loop_k: vec![10, 20],
        ocsvm_nu: vec![0.05, 0.1, 0.3, 0.5],
        ocsvm_max_train: Some(1000),
        iforest_n_trees: vec![50, 100, 150, 200, 250],
        ..GridConfig::default()
    }
}

fn small_config() -> RunConfig {
    let synthetic = |name: &str, n, d, f| {
        let toml = format!("name = \"{name}\"\n[synthetic]\nn = {n}\nd = {d}\noutlier_fraction = {f}\n");
        toml::from_str::<DatasetConfig>(&toml).unwrap()
    };
    RunConfig {
        master_seed: 11,
        trials: 3,
        datasets: vec![synthetic("small-a", 240, 6, 0.1), synthetic("small-b", 200, 12, 0.15)],
        grid: GridConfig {
            knn_k: vec![1, 5, 10],
            lof_k: vec![5, 10],
            loop_k: vec![5],
            ocsvm_nu: vec![0.1],
            iforest_n_trees: vec![30, 60],
            ..GridConfig::empty()
        },
        baseline: xgbod::config::BaselineConfig { n_bags: 5, ..Default::default() },
        boost: BoostParams { n_rounds: 30, ..BoostParams::default() },
        selection: xgbod::config::SweepConfig {
            methods: vec![SelectionMethod::Random, SelectionMethod::Accurate, SelectionMethod::Balance],
            p: vec![PCount::Count(0), PCount::Count(1), PCount::Count(3), PCount::All],
        },
        ..RunConfig::default()
    }
}

fn run(config: &RunConfig, mode: Mode) -> Result<ExperimentReport, String> {
    let datasets = config.load_datasets(Path::new(".")).map_err(|e| e.to_string())?;
    run_experiment(config, &datasets, mode).map_err(|e| e.to_string())
}

fn exp2_equivalences() -> Check {
    let config = small_config();
    let report = run(&config, Mode::Exp2)?;
    ensure(report.failures == 0, || format!("{} failed records", report.failures))?;
    let find = |ds: &str, t: usize, method: &str, sel: Option<SelectionMethod>, p: Option<&str>| {
        report
            .records
            .iter()
            .find(|r| r.dataset == ds && r.trial == t && r.method == method && r.selection == sel && r.p.as_deref() == p)
            .map(|r| (r.roc, r.p_at_n))
    };
    let mut checked = 0;
    for info in &report.datasets {
        for t in 0..config.trials {
            let orig = find(&info.name, t, Method::XgbOrig.as_str(), None, None).ok_or("missing XGB_Orig")?;
            let comb = find(&info.name, t, Method::XgbComb.as_str(), None, None).ok_or("missing XGB_Comb")?;
            for sel in &config.selection.methods {
                let zero = find(&info.name, t, "XGB_Sel", Some(*sel), Some("0")).ok_or("missing p=0 cell")?;
                let all = find(&info.name, t, "XGB_Sel", Some(*sel), Some("all")).ok_or("missing p=all cell")?;
                ensure(zero == orig, || format!("{} trial {t} {sel}: p=0 {zero:?} vs XGB_Orig {orig:?}", info.name))?;
                ensure(all == comb, || format!("{} trial {t} {sel}: p=all {all:?} vs XGB_Comb {comb:?}", info.name))?;
                checked += 2;
            }
        }
    }
    Ok(format!("{checked} (trial, selection, p) cells identical to XGB_Orig / XGB_Comb"))
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn determinism() -> Check {
    let config = small_config();
    let mut compared = Vec::new();
    for mode in [Mode::Exp1, Mode::Exp2] {
        let artifacts = |threads| -> Result<Vec<String>, String> {
            let r = in_pool(threads, || run(&config, mode))?;
            let e = |x: xgbod::Result<String>| x.map_err(|e| e.to_string());
            Ok(vec![e(r.to_json())?, e(r.trials_csv())?, e(r.sweep_csv())?, r.render_summary()])
        };
        let one = artifacts(1)?;
        let four = artifacts(4)?;
        let again = artifacts(3)?;
        ensure(one == four && one == again, || format!("{mode:?} reports differ across worker counts"))?;
        compared.push(format!("{mode:?} ({} bytes)", one[0].len()));
    }
    Ok(format!("identical report JSON and CSVs under 1, 3 and 4 workers: {}", compared.join(", ")))
}

fn odds_stretch() -> Check {
    let Some(dir) = std::env::var_os("XGBOD_ODDS_DIR") else {
        return Ok("SKIP: set XGBOD_ODDS_DIR to a directory holding cardio.csv and mnist.csv (label column `label`)".into());
    };
    let dir = PathBuf::from(dir);
    let label = std::env::var("XGBOD_ODDS_LABEL").unwrap_or_else(|_| "label".into());
    let datasets = ["cardio", "mnist"]
        .iter()
        .map(|name| DatasetConfig {
            name: Some(name.to_string()),
            path: Some(dir.join(format!("{name}.csv"))),
            label_column: Some(label.clone()),
            ..Default::default()
        })
        .collect();
    let config = RunConfig { datasets, methods: vec![Method::XgbComb], ..RunConfig::default() };
    let report = run(&config, Mode::Exp1)?;
    let mut parts = Vec::new();
    for (name, target) in [("cardio", 0.9976), ("mnist", 0.9999)] {
        let roc = report.method(name, "XGB_Comb").and_then(|s| s.roc_mean).ok_or("missing summary")?;
        ensure((roc - target).abs() <= 0.03, || format!("{name}: XGB_Comb ROC {roc:.4}, target {target} +/- 0.03"))?;
        parts.push(format!("{name} {roc:.4}"));
    }
    Ok(parts.join(", "))
}

fn end_to_end() -> Check {
    let presets = ["synth-arrhythmia-like", "synth-cardio-like", "synth-speech-like", "synth-satellite-like", "synth-mnist-like"];
    let config = RunConfig {
        master_seed: 7,
        trials: 10,
        datasets: presets.iter().map(|p| DatasetConfig::preset(p)).collect(),
        grid: reduced_grid(),
        ..RunConfig::default()
    };
    let report = run(&config, Mode::Exp1)?;
    ensure(report.failures == 0, || format!("{} failed records", report.failures))?;
    let mean = |ds: &str, m: Method| report.method(ds, m.as_str()).and_then(|s| s.roc_mean).unwrap_or(f64::NAN);
    let (mut over_orig, mut over_full) = (0, 0);
    let mut rows = Vec::new();
    for p in presets {
        let (comb, orig, full) = (mean(p, Method::XgbComb), mean(p, Method::XgbOrig), mean(p, Method::FullTos));
        over_orig += usize::from(comb >= orig);
        over_full += usize::from(comb >= full);
        rows.push(format!("{p}: Comb {comb:.4} Orig {orig:.4} Full {full:.4}"));
    }
    let k = xgbod::detectors::build_grid(&config.grid, 0).map_err(|e| e.to_string())?.len();
    let detail = format!("{k} TOS; XGB_Comb >= XGB_Orig on {over_orig}/5, >= Full_TOS on {over_full}/5; {}", rows.join("; "));
    ensure(over_orig >= 4 && over_full == 5, || detail.clone())?;
    Ok(detail)
}

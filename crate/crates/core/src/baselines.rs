//! Regularized logistic regression and its EasyEnsemble wrapper.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{logistic_loss, sigmoid};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Gradient-norm tolerance for both solvers.
pub const LOGREG_TOLERANCE: f64 = 1e-6;
const MAX_OUTER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Penalty {
    L1,
    L2,
}

impl Penalty {
    pub fn as_str(self) -> &'static str {
        match self {
            Penalty::L1 => "L1",
            Penalty::L2 => "L2",
        }
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Penalty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(Penalty::L1),
            "L2" => Ok(Penalty::L2),
            _ => Err(Error::InvalidArgument(format!("unknown penalty '{s}'"))),
        }
    }
}

/// Per-feature z-scaling. A zero `std` marks a constant feature, mapped to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s > 1e-12 * (1.0 + m.abs()) { s } else { 0.0 });
        }
        Self { mean, std }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| if s > 0.0 { (v - m) / s } else { 0.0 });
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub penalty: Penalty,
    pub strength: f64,
    pub scaler: Scaler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<LinearModel>,
    pub n_bags: usize,
}

/// Models producing an outlier probability per row.
pub trait ProbabilisticModel {
    fn n_features(&self) -> usize;
    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>>;
}

impl LinearModel {
    fn decision(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let z = self.scaler.transform(x);
        z.dot(&Array1::from(self.weights.clone())) + self.intercept
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }
}

impl ProbabilisticModel for LinearModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_width(self.n_features(), x)?;
        Ok(self.decision(x).iter().map(|&m| sigmoid(m)).collect())
    }
}

impl EnsembleModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }
}

impl ProbabilisticModel for EnsembleModel {
    fn n_features(&self) -> usize {
        self.members.first().map_or(0, LinearModel::n_features)
    }

    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_width(self.n_features(), x)?;
        let mut sum = vec![0.0; x.nrows()];
        for m in &self.members {
            for (s, p) in sum.iter_mut().zip(m.predict_proba(x)?) {
                *s += p;
            }
        }
        let k = self.members.len() as f64;
        Ok(sum.into_iter().map(|s| s / k).collect())
    }
}

pub fn predict_proba_linear<M: ProbabilisticModel + ?Sized>(model: &M, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    model.predict_proba(x)
}

fn check_width(expected: usize, x: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::DimensionMismatch { expected, actual: x.ncols() });
    }
    Ok(())
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Scaled design matrix with both row-major and column-major copies.
struct Problem {
    z: Array2<f64>,
    zt: Array2<f64>,
    y: Vec<f64>,
    strength: f64,
}

impl Problem {
    fn margins(&self, w: &Array1<f64>, b: f64) -> Array1<f64> {
        self.z.dot(w) + b
    }

    fn loss(&self, m: &Array1<f64>) -> f64 {
        m.iter().zip(&self.y).map(|(&m, &y)| logistic_loss(m, y)).sum()
    }

    /// Residuals p − y and curvatures p(1 − p) at margins `m`.
    fn residuals(&self, m: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let p = m.mapv(sigmoid);
        let r = Array1::from_iter(p.iter().zip(&self.y).map(|(p, y)| p - y));
        let d = p.mapv(|p| p * (1.0 - p));
        (r, d)
    }
}

/// Fits logistic regression on z-scaled features minimizing
/// Σ loss + strength · R(w) with R = ½‖w‖² (L2) or ‖w‖₁ (L1). The intercept
/// is not penalized. The solvers are deterministic; `seed` is accepted for
/// interface symmetry with other trainers.
pub fn train_logreg(x: ArrayView2<'_, f64>, labels: &[u8], penalty: Penalty, strength: f64, seed: u64) -> Result<LinearModel> {
    let _ = seed;
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), actual: labels.len() });
    }
    if !(strength > 0.0) || !strength.is_finite() {
        return Err(Error::InvalidArgument(format!("logistic regression: strength must be > 0, got {strength}")));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("logistic regression: non-finite feature".into()));
    }
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let zt = z.t().as_standard_layout().into_owned();
    let problem = Problem { z, zt, y: labels.iter().map(|&v| f64::from(v)).collect(), strength };
    let b0 = (n_pos as f64 / (labels.len() - n_pos) as f64).ln();
    let (w, b) = match penalty {
        Penalty::L2 => newton_cg(&problem, b0)?,
        Penalty::L1 => prox_newton(&problem, b0)?,
    };
    Ok(LinearModel { weights: w.to_vec(), intercept: b, penalty, strength, scaler })
}

/// L2 objective value at (w, b) on an already scaled problem.
fn l2_objective(p: &Problem, w: &Array1<f64>, b: f64) -> f64 {
    p.loss(&p.margins(w, b)) + 0.5 * p.strength * w.dot(w)
}

/// Armijo test that also accepts a step whose objective change is within
/// rounding of the current value; near the optimum the sums can no longer
/// resolve the predicted decrease.
fn accept(f_new: f64, f0: f64, predicted: f64) -> bool {
    f_new <= f0 + predicted || f_new - f0 <= 16.0 * f64::EPSILON * f0.abs()
}

fn newton_cg(p: &Problem, b0: f64) -> Result<(Array1<f64>, f64)> {
    let d = p.z.ncols();
    let mut w = Array1::zeros(d);
    let mut b = b0;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..MAX_OUTER {
        iterations = it + 1;
        let m = p.margins(&w, b);
        let (r, curv) = p.residuals(&m);
        let gw = p.zt.dot(&r) + p.strength * &w;
        let gb = r.sum();
        grad_norm = (gw.dot(&gw) + gb * gb).sqrt();
        if grad_norm <= LOGREG_TOLERANCE {
            return Ok((w, b));
        }
        let hess_vec = |vw: &Array1<f64>, vb: f64| {
            let u = (p.z.dot(vw) + vb) * &curv;
            (p.zt.dot(&u) + p.strength * vw, u.sum())
        };
        // Conjugate gradient on H s = -g.
        let (mut sw, mut sb) = (Array1::zeros(d), 0.0);
        let (mut rw, mut rb) = (-&gw, -gb);
        let (mut dw, mut db) = (rw.clone(), rb);
        let mut rr = rw.dot(&rw) + rb * rb;
        let eta = grad_norm.sqrt().min(0.5) * grad_norm;
        for _ in 0..(2 * (d + 1)).max(20) {
            if rr.sqrt() <= eta {
                break;
            }
            let (hw, hb) = hess_vec(&dw, db);
            let dhd = dw.dot(&hw) + db * hb;
            if dhd <= 0.0 {
                break;
            }
            let alpha = rr / dhd;
            sw.scaled_add(alpha, &dw);
            sb += alpha * db;
            rw.scaled_add(-alpha, &hw);
            rb -= alpha * hb;
            let rr_new = rw.dot(&rw) + rb * rb;
            let beta = rr_new / rr;
            dw = &rw + beta * &dw;
            db = rb + beta * db;
            rr = rr_new;
        }
        let slope = gw.dot(&sw) + gb * sb;
        if !(slope < 0.0) {
            sw = -&gw;
            sb = -gb;
        }
        let slope = gw.dot(&sw) + gb * sb;
        let f0 = p.loss(&m) + 0.5 * p.strength * w.dot(&w);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let wt = &w + t * &sw;
            let bt = b + t * sb;
            if accept(l2_objective(p, &wt, bt), f0, 1e-4 * t * slope) {
                w = wt;
                b = bt;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Err(Error::LogRegNonConvergence { penalty: "L2", iterations, grad_norm })
}

fn l1_objective(p: &Problem, w: &Array1<f64>, b: f64) -> f64 {
    p.loss(&p.margins(w, b)) + p.strength * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Norm of the minimum-norm subgradient of the L1 objective.
fn l1_optimality(s: f64, w: &Array1<f64>, gw: &Array1<f64>, gb: f64) -> f64 {
    let mut acc = gb * gb;
    for (&wj, &gj) in w.iter().zip(gw) {
        let v = if wj > 0.0 {
            gj + s
        } else if wj < 0.0 {
            gj - s
        } else {
            (gj.abs() - s).max(0.0)
        };
        acc += v * v;
    }
    acc.sqrt()
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

/// Proximal Newton: each outer step minimizes a quadratic model of the loss
/// plus the L1 term by cyclic coordinate descent with soft-thresholding,
/// followed by a backtracking line search.
fn prox_newton(p: &Problem, b0: f64) -> Result<(Array1<f64>, f64)> {
    let d = p.z.ncols();
    let s = p.strength;
    let mut w: Array1<f64> = Array1::zeros(d);
    let mut b = b0;
    let mut opt = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..MAX_OUTER {
        iterations = it + 1;
        let m = p.margins(&w, b);
        let (r, curv) = p.residuals(&m);
        let gw = p.zt.dot(&r);
        let gb = r.sum();
        opt = l1_optimality(s, &w, &gw, gb);
        if opt <= LOGREG_TOLERANCE {
            return Ok((w, b));
        }
        // Explicit Hessian of the loss: [Zᵀ C Z, Zᵀ c; cᵀ Z, Σ c].
        let mut zc = p.z.clone();
        for (mut row, &c) in zc.rows_mut().into_iter().zip(&curv) {
            row *= c.sqrt();
        }
        let hww = zc.t().dot(&zc);
        let hwb = p.zt.dot(&curv);
        let hbb = curv.sum().max(1e-300);
        let mut delta: Array1<f64> = Array1::zeros(d);
        let mut db = 0.0;
        // (u, ub) = H · (delta, db), kept in sync with coordinate updates
        let mut u: Array1<f64> = Array1::zeros(d);
        let mut ub = 0.0;
        let inner_tol = (1e-3 * opt).max(1e-15);
        for _ in 0..2000 {
            let mut max_change: f64 = 0.0;
            for j in 0..d {
                let a = hww[[j, j]];
                if a <= 0.0 {
                    continue;
                }
                let cur = w[j] + delta[j];
                let new = soft_threshold(cur - (gw[j] + u[j]) / a, s / a);
                let step = new - cur;
                if step != 0.0 {
                    delta[j] += step;
                    u.scaled_add(step, &hww.column(j));
                    ub += step * hwb[j];
                    max_change = max_change.max(step.abs() * a);
                }
            }
            let step = -(gb + ub) / hbb;
            db += step;
            u.scaled_add(step, &hwb);
            ub += step * hbb;
            max_change = max_change.max(step.abs() * hbb);
            if max_change <= inner_tol {
                break;
            }
        }
        let l1 = |v: &Array1<f64>| v.iter().map(|x| x.abs()).sum::<f64>();
        let f0 = p.loss(&m) + s * l1(&w);
        let decrease = gw.dot(&delta) + gb * db + s * (l1(&(&w + &delta)) - l1(&w));
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let wt = &w + t * &delta;
            let bt = b + t * db;
            if accept(l1_objective(p, &wt, bt), f0, 0.01 * t * decrease.min(0.0)) {
                moved = wt != w || bt != b;
                w = wt;
                b = bt;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Err(Error::LogRegNonConvergence { penalty: "L1", iterations, grad_norm: opt })
}

/// Row indices of each balanced bag: all outliers plus an equal-size uniform
/// sample of inliers, sorted ascending.
pub fn balanced_bags(labels: &[u8], n_bags: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let minority: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let majority: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    if minority.is_empty() || majority.is_empty() {
        return Err(Error::SingleClass);
    }
    if n_bags == 0 {
        return Err(Error::InvalidArgument("easy ensemble: n_bags must be >= 1".into()));
    }
    let with_replacement = minority.len() > majority.len();
    if with_replacement {
        log::warn!(
            "easy ensemble: {} outliers exceed {} inliers; sampling inliers with replacement",
            minority.len(),
            majority.len()
        );
    }
    Ok((0..n_bags)
        .map(|bag| {
            let mut rng = rng_from_seed(derive_seed(seed, &format!("bag/{bag}")));
            let mut rows = minority.clone();
            if with_replacement {
                rows.extend((0..minority.len()).map(|_| majority[rng.random_range(0..majority.len())]));
            } else {
                rows.extend(sample(&mut rng, majority.len(), minority.len()).into_iter().map(|i| majority[i]));
            }
            rows.sort_unstable();
            rows
        })
        .collect())
}

pub fn easy_ensemble(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    n_bags: usize,
    penalty: Penalty,
    strength: f64,
    seed: u64,
) -> Result<EnsembleModel> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), actual: labels.len() });
    }
    let bags = balanced_bags(labels, n_bags, seed)?;
    let members = bags
        .par_iter()
        .enumerate()
        .map(|(i, rows)| {
            let bx = x.select(Axis(0), rows);
            let by: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
            train_logreg(bx.view(), &by, penalty, strength, derive_seed(seed, &format!("member/{i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel { members, n_bags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn noisy_fixture() -> (Array2<f64>, Vec<u8>) {
        let mut rng = rng_from_seed(7);
        let n = 80;
        let mut x = Array2::zeros((n, 2));
        let mut y = vec![0u8; n];
        for i in 0..n {
            let label = u8::from(i % 2 == 0);
            y[i] = label;
            x[[i, 0]] = if label == 1 { 1.0 } else { -1.0 } + rng.random_range(-1.5..1.5);
            x[[i, 1]] = rng.random_range(-1.0..1.0);
        }
        (x, y)
    }

    #[test]
    fn separable_l2_weight_positive() {
        let x = array![[-1.0], [-1.0], [1.0], [1.0]];
        let m = train_logreg(x.view(), &[0, 0, 1, 1], Penalty::L2, 1.0, 0).unwrap();
        assert!(m.weights[0] > 0.0);
    }

    #[test]
    fn huge_l1_strength_zeroes_weights() {
        let (x, y) = noisy_fixture();
        let m = train_logreg(x.view(), &y, Penalty::L1, 1e9, 0).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        let pos = y.iter().filter(|&&v| v == 1).count() as f64;
        let prior = (pos / (y.len() as f64 - pos)).ln();
        assert!((m.intercept - prior).abs() < 1e-9);
    }

    #[test]
    fn l2_descent_property() {
        let (x, y) = noisy_fixture();
        let m = train_logreg(x.view(), &y, Penalty::L2, 1.0, 0).unwrap();
        let z = m.scaler.transform(x.view());
        let obj = |w: &[f64], b: f64| {
            let loss: f64 = (0..y.len())
                .map(|i| logistic_loss(z.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b, f64::from(y[i])))
                .sum();
            loss + 0.5 * w.iter().map(|v| v * v).sum::<f64>()
        };
        assert!(obj(&m.weights, m.intercept) <= obj(&[0.0, 0.0], 0.0));
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LinearModel {
            weights: vec![0.0],
            intercept: 0.0,
            penalty: Penalty::L2,
            strength: 1.0,
            scaler: Scaler { mean: vec![0.0], std: vec![1.0] },
        };
        assert_eq!(predict_proba_linear(&m, array![[3.0], [-2.0]].view()).unwrap(), vec![0.5, 0.5]);
        assert!(m.predict_proba(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn ensemble_mean_of_members() {
        let constant = |p: f64| LinearModel {
            weights: vec![0.0],
            intercept: (p / (1.0 - p)).ln(),
            penalty: Penalty::L2,
            strength: 1.0,
            scaler: Scaler { mean: vec![0.0], std: vec![1.0] },
        };
        let e = EnsembleModel { members: vec![constant(0.2), constant(0.6)], n_bags: 2 };
        let p = e.predict_proba(array![[0.0]].view()).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn bags_balanced_and_deterministic() {
        let labels: Vec<u8> = (0..110).map(|i| u8::from(i < 10)).collect();
        let bags = balanced_bags(&labels, 5, 3).unwrap();
        for bag in &bags {
            assert_eq!(bag.len(), 20);
            assert_eq!(bag.iter().filter(|&&r| labels[r] == 1).count(), 10);
        }
        assert_eq!(bags, balanced_bags(&labels, 5, 3).unwrap());
        assert!(balanced_bags(&[0, 0, 0], 1, 0).is_err());
    }

    #[test]
    fn single_bag_matches_member() {
        let (x, y) = noisy_fixture();
        let e = easy_ensemble(x.view(), &y, 1, Penalty::L2, 1.0, 5).unwrap();
        let a = e.predict_proba(x.view()).unwrap();
        let b = e.members[0].predict_proba(x.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn affine_rescaling_invariance() {
        let (x, y) = noisy_fixture();
        let mut x2 = x.clone();
        x2.column_mut(0).mapv_inplace(|v| 3.0 * v - 7.0);
        for penalty in [Penalty::L1, Penalty::L2] {
            let a = train_logreg(x.view(), &y, penalty, 1.0, 0).unwrap().predict_proba(x.view()).unwrap();
            let b = train_logreg(x2.view(), &y, penalty, 1.0, 0).unwrap().predict_proba(x2.view()).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }
}

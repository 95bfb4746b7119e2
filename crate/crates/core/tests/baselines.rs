use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use xgbod::baselines::{balanced_bags, easy_ensemble, train_logreg, Penalty, ProbabilisticModel, Scaler};
use xgbod::seed::rng_from_seed;

/// Six features, only the first two informative.
fn sparse_fixture(seed: u64) -> (Array2<f64>, Vec<u8>) {
    let mut rng = rng_from_seed(seed);
    let x = Array2::from_shape_fn((80, 6), |_| rng.sample::<f64, _>(StandardNormal));
    let y = (0..80)
        .map(|i| u8::from(1.5 * x[[i, 0]] - x[[i, 1]] + 0.7 * rng.sample::<f64, _>(StandardNormal) > 0.8))
        .collect();
    (x, y)
}

fn l1_objective(z: &Array2<f64>, y: &[u8], w: &Array1<f64>, b: f64, strength: f64) -> f64 {
    let m = z.dot(w) + b;
    let loss: f64 = m.iter().zip(y).map(|(&m, &y)| m.max(0.0) + (-m.abs()).exp().ln_1p() - f64::from(y) * m).sum();
    loss + strength * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Accelerated proximal gradient (FISTA) with a fixed 1/L step.
fn fista_l1(z: &Array2<f64>, y: &[u8], strength: f64) -> (Array1<f64>, f64) {
    let (n, d) = z.dim();
    let lipschitz = 0.25 * (z.iter().map(|v| v * v).sum::<f64>() + n as f64);
    let step = 1.0 / lipschitz;
    let (mut w, mut b) = (Array1::<f64>::zeros(d), 0.0);
    let (mut vw, mut vb) = (w.clone(), b);
    let mut t: f64 = 1.0;
    for _ in 0..200_000 {
        let m = z.dot(&vw) + vb;
        let r: Array1<f64> = m.iter().zip(y).map(|(&m, &y)| 1.0 / (1.0 + (-m).exp()) - f64::from(y)).collect();
        let gw = z.t().dot(&r);
        let gb = r.sum();
        let nw: Array1<f64> = (&vw - &(gw * step)).mapv(|v| v.signum() * (v.abs() - step * strength).max(0.0));
        let nb = vb - step * gb;
        let nt = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / nt;
        vw = &nw + &((&nw - &w) * mom);
        vb = nb + mom * (nb - b);
        w = nw;
        b = nb;
        t = nt;
    }
    (w, b)
}

fn zero_pattern(w: &[f64]) -> Vec<bool> {
    w.iter().map(|&v| v == 0.0).collect()
}

#[test]
fn l1_matches_proximal_gradient_oracle() {
    let (x, y) = sparse_fixture(1);
    let strength = 6.0;
    let model = train_logreg(x.view(), &y, Penalty::L1, strength, 0).unwrap();
    let z = Scaler::fit(x.view()).transform(x.view());
    let (w_ref, b_ref) = fista_l1(&z, &y, strength);
    let w = Array1::from(model.weights.clone());
    let f = l1_objective(&z, &y, &w, model.intercept, strength);
    let f_ref = l1_objective(&z, &y, &w_ref, b_ref, strength);
    assert!(f <= f_ref + 1e-6 * f_ref.abs(), "objective {f} vs oracle {f_ref}");
    for (a, b) in w.iter().zip(&w_ref) {
        assert!((a - b).abs() < 1e-4, "weights {w} vs {w_ref}");
    }
    assert_eq!(zero_pattern(&model.weights), zero_pattern(w_ref.as_slice().unwrap()));
    assert!(model.weights.iter().filter(|v| **v == 0.0).count() >= 2, "expected a sparse solution: {:?}", model.weights);
    assert!(model.weights[0] != 0.0 && model.weights[1] != 0.0);
}

#[test]
fn l1_zero_pattern_is_stable_under_tiny_strength_changes() {
    for seed in 0..4 {
        let (x, y) = sparse_fixture(seed);
        let pattern = |s: f64| zero_pattern(&train_logreg(x.view(), &y, Penalty::L1, s, 0).unwrap().weights);
        for s in [2.0, 6.0, 12.0] {
            let base = pattern(s);
            assert_eq!(pattern(s + 1e-8), base, "seed {seed} strength {s}");
            assert_eq!(pattern(s - 1e-8), base, "seed {seed} strength {s}");
        }
    }
}

#[test]
fn l2_objective_not_above_zero_model() {
    let (x, y) = sparse_fixture(7);
    let model = train_logreg(x.view(), &y, Penalty::L2, 1.0, 0).unwrap();
    let z = Scaler::fit(x.view()).transform(x.view());
    let obj = |w: &Array1<f64>, b: f64| {
        let m = z.dot(w) + b;
        let loss: f64 = m.iter().zip(&y).map(|(&m, &y)| m.max(0.0) + (-m.abs()).exp().ln_1p() - f64::from(y) * m).sum();
        loss + 0.5 * w.dot(w)
    };
    let fitted = obj(&Array1::from(model.weights.clone()), model.intercept);
    assert!(fitted <= obj(&Array1::zeros(6), 0.0));
    // Optimality: the gradient vanishes at the returned point.
    let m = z.dot(&Array1::from(model.weights.clone())) + model.intercept;
    let r: Array1<f64> = m.iter().zip(&y).map(|(&m, &y)| 1.0 / (1.0 + (-m).exp()) - f64::from(y)).collect();
    let g = z.t().dot(&r) + Array1::from(model.weights.clone());
    assert!(g.iter().all(|v| v.abs() < 1e-4) && r.sum().abs() < 1e-4, "gradient {g}");
}

#[test]
fn ensemble_predictions_in_unit_interval() {
    let (x, y) = sparse_fixture(3);
    let model = easy_ensemble(x.view(), &y, 7, Penalty::L2, 1.0, 11).unwrap();
    assert_eq!(model.members.len(), 7);
    let p = model.predict_proba(x.view()).unwrap();
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(p, easy_ensemble(x.view(), &y, 7, Penalty::L2, 1.0, 11).unwrap().predict_proba(x.view()).unwrap());
}

proptest! {
    #[test]
    fn bags_are_exactly_balanced(n_in in 2usize..120, n_out in 1usize..40, bags in 1usize..12, seed in any::<u64>()) {
        let mut labels = vec![0u8; n_in];
        labels.extend(std::iter::repeat(1u8).take(n_out));
        for bag in balanced_bags(&labels, bags, seed).unwrap() {
            let out = bag.iter().filter(|&&i| labels[i] == 1).count();
            prop_assert_eq!(out, n_out);
            prop_assert_eq!(bag.len(), 2 * n_out);
            let mut outliers: Vec<usize> = bag.iter().copied().filter(|&i| labels[i] == 1).collect();
            outliers.dedup();
            prop_assert_eq!(outliers.len(), n_out);
            if n_out <= n_in {
                let mut uniq = bag.clone();
                uniq.dedup();
                prop_assert_eq!(uniq.len(), bag.len());
            }
        }
    }
}

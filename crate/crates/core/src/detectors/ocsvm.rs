//! ν-parameterized one-class SVM with an RBF kernel.
//!
//! The dual `min ½ αᵀKα  s.t. 0 ≤ αᵢ ≤ 1, Σαᵢ = ν·l` is solved by sequential
//! minimal optimization with second-order working-set selection, following
//! the LIBSVM solver for the all-positive one-class case.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;

use super::neighbors::squared_distance;
use super::spec::GammaMode;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub const TOLERANCE: f64 = 1e-3;
pub const MAX_ITERATIONS: usize = 10_000_000;
const TAU: f64 = 1e-12;
/// Kernel matrices up to this many rows are materialized up front.
const FULL_KERNEL_MAX_ROWS: usize = 3000;
const ROW_CACHE_BYTES: usize = 256 << 20;

#[derive(Debug, Clone)]
pub struct OneClassSvm {
    support: Array2<f64>,
    coef: Vec<f64>,
    rho: f64,
    gamma: f64,
    iterations: usize,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * squared_distance(a, b)).exp()
}

/// RBF kernel between every row of `a` and every row of `b`, with squared
/// distances expanded as ‖a‖² + ‖b‖² − 2a·b.
fn rbf_block(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let na: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let nb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut k = a.dot(&b.t());
    for ((i, j), v) in k.indexed_iter_mut() {
        *v = (-gamma * (na[i] + nb[j] - 2.0 * *v).max(0.0)).exp();
    }
    k
}

/// γ for the "scale" policy: 1 / (d · var(X)), falling back to 1 on zero variance.
pub fn scale_gamma(x: &Array2<f64>) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0
    }
}

enum Kernel<'a> {
    Full(Vec<f64>),
    Cached {
        x: &'a Array2<f64>,
        rows: Vec<Option<Vec<f64>>>,
        fifo: std::collections::VecDeque<usize>,
        capacity: usize,
    },
}

impl<'a> Kernel<'a> {
    fn new(x: &'a Array2<f64>, gamma: f64) -> Self {
        let l = x.nrows();
        if l <= FULL_KERNEL_MAX_ROWS {
            let mut k = rbf_block(x.view(), x.view(), gamma);
            for i in 0..l {
                k[[i, i]] = 1.0;
                for j in 0..i {
                    k[[j, i]] = k[[i, j]];
                }
            }
            Kernel::Full(k.into_raw_vec_and_offset().0)
        } else {
            Kernel::Cached {
                x,
                rows: vec![None; l],
                fifo: Default::default(),
                capacity: (ROW_CACHE_BYTES / (8 * l)).max(2),
            }
        }
    }

    fn row(&mut self, i: usize, gamma: f64) -> &[f64] {
        match self {
            Kernel::Full(k) => {
                let l = (k.len() as f64).sqrt() as usize;
                &k[i * l..(i + 1) * l]
            }
            Kernel::Cached { x, rows, fifo, capacity } => {
                if rows[i].is_none() {
                    if fifo.len() >= *capacity {
                        if let Some(old) = fifo.pop_front() {
                            rows[old] = None;
                        }
                    }
                    let xi = x.row(i);
                    let xi = xi.as_slice().expect("standard layout");
                    let row = x
                        .rows()
                        .into_iter()
                        .map(|xj| rbf(xi, xj.as_slice().expect("standard layout"), gamma))
                        .collect();
                    rows[i] = Some(row);
                    fifo.push_back(i);
                }
                rows[i].as_deref().expect("row just filled")
            }
        }
    }
}

impl OneClassSvm {
    /// Fits on the rows of `x`. When `max_train` caps the row count, a uniform
    /// subsample drawn with `seed` is used.
    pub fn fit(x: &Array2<f64>, nu: f64, gamma: GammaMode, max_train: Option<usize>, seed: u64) -> Result<Self> {
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::InvalidArgument(format!("nu must lie in (0, 1], got {nu}")));
        }
        let x = match max_train {
            Some(cap) if x.nrows() > cap => {
                let mut rows = sample(&mut rng_from_seed(seed), x.nrows(), cap).into_vec();
                rows.sort_unstable();
                x.select(Axis(0), &rows)
            }
            _ => x.as_standard_layout().into_owned(),
        };
        let gamma = match gamma {
            GammaMode::Scale => scale_gamma(&x),
            GammaMode::Fixed(g) => g,
        };
        let l = x.nrows();
        let total = nu * l as f64;

        // Feasible start: the first ⌊ν·l⌋ multipliers at the upper bound 1.
        let mut alpha = vec![0.0; l];
        let full = (total.floor() as usize).min(l);
        alpha[..full].fill(1.0);
        if full < l {
            alpha[full] = total - full as f64;
        }

        let mut kernel = Kernel::new(&x, gamma);
        let mut grad = vec![0.0; l];
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let row = kernel.row(j, gamma);
                for (g, &kv) in grad.iter_mut().zip(row) {
                    *g += a * kv;
                }
            }
        }

        let mut iterations = 0;
        loop {
            // Maximal violating pair with second-order selection of j.
            let mut g_max = f64::NEG_INFINITY;
            let mut i_sel = None;
            for t in 0..l {
                if alpha[t] < 1.0 && -grad[t] >= g_max {
                    g_max = -grad[t];
                    i_sel = Some(t);
                }
            }
            let mut g_max2 = f64::NEG_INFINITY;
            let mut j_sel = None;
            if let Some(i) = i_sel {
                let k_ii = 1.0;
                let row_i = kernel.row(i, gamma).to_vec();
                let mut best = f64::INFINITY;
                for t in 0..l {
                    if alpha[t] > 0.0 {
                        let diff = g_max + grad[t];
                        if grad[t] >= g_max2 {
                            g_max2 = grad[t];
                        }
                        if diff > 0.0 {
                            let quad = k_ii + 1.0 - 2.0 * row_i[t];
                            let quad = if quad > 0.0 { quad } else { TAU };
                            let obj = -(diff * diff) / quad;
                            if obj <= best {
                                best = obj;
                                j_sel = Some(t);
                            }
                        }
                    }
                }
            }
            let gap = g_max + g_max2;
            let (i, j) = match (i_sel, j_sel) {
                (Some(i), Some(j)) if gap >= TOLERANCE => (i, j),
                _ => break,
            };
            if iterations >= MAX_ITERATIONS {
                return Err(Error::SvmNonConvergence { iterations, gap, tolerance: TOLERANCE });
            }
            iterations += 1;

            let row_i = kernel.row(i, gamma).to_vec();
            let quad = 2.0 - 2.0 * row_i[j];
            let quad = if quad > 0.0 { quad } else { TAU };
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = old_i + old_j;
            let (mut ai, mut aj) = (old_i - delta, old_j + delta);
            if sum > 1.0 {
                if ai > 1.0 {
                    ai = 1.0;
                    aj = sum - 1.0;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > 1.0 {
                if aj > 1.0 {
                    aj = 1.0;
                    ai = sum - 1.0;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
            alpha[i] = ai;
            alpha[j] = aj;
            let (di, dj) = (ai - old_i, aj - old_j);
            let row_j = kernel.row(j, gamma);
            for t in 0..l {
                grad[t] += row_i[t] * di + row_j[t] * dj;
            }
        }

        // Offset: mean gradient over free multipliers, else the bound midpoint.
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free_sum, mut free_n) = (0.0, 0usize);
        for t in 0..l {
            if alpha[t] >= 1.0 {
                lb = lb.max(grad[t]);
            } else if alpha[t] <= 0.0 {
                ub = ub.min(grad[t]);
            } else {
                free_sum += grad[t];
                free_n += 1;
            }
        }
        let rho = if free_n > 0 { free_sum / free_n as f64 } else { 0.5 * (ub + lb) };

        let sv: Vec<usize> = (0..l).filter(|&t| alpha[t] > 0.0).collect();
        Ok(Self {
            support: x.select(Axis(0), &sv),
            coef: sv.iter().map(|&t| alpha[t]).collect(),
            rho,
            gamma,
            iterations,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    /// Σ αᵢ K(xᵢ, x) − ρ; positive inside the estimated support.
    pub fn decision_function(&self, points: ArrayView2<'_, f64>) -> Vec<f64> {
        rbf_block(points, self.support.view(), self.gamma)
            .rows()
            .into_iter()
            .map(|k| k.iter().zip(&self.coef).map(|(k, a)| a * k).sum::<f64>() - self.rho)
            .collect()
    }

    /// Negated decision function, so higher means more outlying.
    pub fn score_points(&self, points: ArrayView2<'_, f64>) -> Vec<f64> {
        self.decision_function(points).into_iter().map(|v| -v).collect()
    }
}

//! Soft-margin linear SVM with an unregularised bias, solved in the dual by
//! sequential minimal optimisation with second-order working-set selection.
//!
//! Minimises `1/2 |w|^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alphas: Vec<f64>,
    pub iterations: usize,
    /// False when the iteration cap was hit before the KKT gap closed.
    pub converged: bool,
}

impl SvmSolution {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Fits on `n` row-major points of dimension `dim` with labels `y_i` in
/// {-1, +1}. Stops once the maximal KKT violation drops below `tol`.
pub fn fit_linear_svm(x: &[f64], dim: usize, y: &[f64], c: f64, tol: f64) -> Result<SvmSolution> {
    let n = y.len();
    if x.len() != n * dim {
        return Err(Error::DimensionMismatch { expected: n * dim, actual: x.len() });
    }
    if !(c > 0.0 && c.is_finite()) || !(tol > 0.0) {
        return Err(Error::invalid("SVM penalty and tolerance must be positive"));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("SVM labels must be -1 or +1"));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::InsufficientData("SVM needs both classes".into()));
    }
    let row = |i: usize| &x[i * dim..(i + 1) * dim];
    let mut kernel = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let k: f64 = row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum();
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
        }
    }
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;
    let max_iter = 10_000_000usize.max(100 * n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // Working set: i maximises -y G over I_up, j the second-order gain over I_low.
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let eligible = if y[t] > 0.0 { !is_upper(alpha[t]) } else { !is_lower(alpha[t]) };
            if eligible && -y[t] * grad[t] >= g_max {
                g_max = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let i = i_sel;
            for t in 0..n {
                let eligible = if y[t] > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t]) };
                if !eligible {
                    continue;
                }
                let yg = y[t] * grad[t];
                g_max2 = g_max2.max(yg);
                let diff = g_max + yg;
                if diff > 0.0 {
                    let quad = kernel[i * n + i] + kernel[t * n + t] - 2.0 * kernel[i * n + t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if g_max + g_max2 < tol || j_sel == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    // Bias from free support vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let mut weights = vec![0.0f64; dim];
    for t in 0..n {
        if alpha[t] != 0.0 {
            for (w, v) in weights.iter_mut().zip(row(t)) {
                *w += alpha[t] * y[t] * v;
            }
        }
    }
    Ok(SvmSolution { weights, bias: -rho, alphas: alpha, iterations, converged })
}

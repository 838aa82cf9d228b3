//! Pairwise coordinate ascent on the dual with second-order working-set
//! selection.
//!
//! Minimizes `f(a) = a'Qa/2 - e'a` with `Q_ij = y_i y_j K_ij`, subject to
//! `0 <= a_i <= C` and `y'a = 0`.

use super::{Gram, SvmParams};
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final maximal violation `m(a) - M(a)`.
    pub gap: f64,
}

/// `sum(a) - a'Qa/2`, the quantity being maximized.
pub fn dual_objective(gram: &Gram, y: &[i8], alpha: &[f64]) -> f64 {
    let n = gram.n;
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let row = gram.row(i);
        for j in 0..n {
            quad += alpha[i] * alpha[j] * (y[i] * y[j]) as f64 * row[j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

pub fn solve_dual(gram: &Gram, y: &[i8], params: &SvmParams) -> Result<DualSolution> {
    let n = gram.n;
    let c = params.c;
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];

    let in_up = |t: usize, a: &[f64]| (yf[t] > 0.0 && a[t] < c) || (yf[t] < 0.0 && a[t] > 0.0);
    let in_low = |t: usize, a: &[f64]| (yf[t] > 0.0 && a[t] > 0.0) || (yf[t] < 0.0 && a[t] < c);

    let mut iterations = 0;
    let gap = loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(t, &alpha) && -yf[t] * grad[t] > gmax {
                gmax = -yf[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(t, &alpha) {
                continue;
            }
            let v = -yf[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX {
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = gram.get(i, i) + gram.get(t, t) - 2.0 * gram.get(i, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        let gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < params.tolerance {
            break gap.max(0.0);
        }
        if iterations >= params.max_iter {
            return Err(Error::NonConvergence { iterations, gap });
        }
        iterations += 1;

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let kij = gram.get(i, j);
        let qij = yf[i] * yf[j] * kij;
        if yf[i] != yf[j] {
            let quad = (gram.get(i, i) + gram.get(j, j) + 2.0 * qij).max(TAU);
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
            let quad = (gram.get(i, i) + gram.get(j, j) - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }

        let (di, dj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        let (ri, rj) = (gram.row(i), gram.row(j));
        for t in 0..n {
            grad[t] += yf[t] * (yf[i] * ri[t] * di + yf[j] * rj[t] * dj);
        }
    };

    // bias from free vectors; midpoint of the feasible interval otherwise
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = yf[t] * grad[t];
        if alpha[t] >= c {
            if yf[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if yf[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };
    Ok(DualSolution { alpha, bias: -rho, iterations, gap })
}

use alloc::vec::Vec;

use super::{sigmoid, softplus};
use crate::error::{bail, Result};
use crate::linalg::solve_spd;
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the gradient.
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Binary logistic regression with an L2 penalty on the weights:
/// `sum_i log(1 + exp(-s_i (x_i w + b))) + l2/2 |w|^2`.
///
/// `l2` is the inverse of the usual `C` parameter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted Newton step (first entry: start point).
    pub loss_history: Vec<f64>,
}

impl LogisticModel {
    pub fn decision_row(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    pub fn predict_proba_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision_row(x))
    }

    pub fn decision_function(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.decision_row(x.row(i))).collect()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows())
            .map(|i| self.predict_proba_row(x.row(i)))
            .collect()
    }
}

fn objective(x: &Matrix, labels: &[bool], w: &[f64], b: f64, l2: f64) -> f64 {
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let t = dot(w, x.row(i)) + b;
        loss += if l { softplus(-t) } else { softplus(t) };
    }
    loss + 0.5 * l2 * dot(w, w)
}

/// Fits by iteratively reweighted least squares (damped Newton). Steps that
/// would increase the objective are halved until they do not.
pub fn logistic_fit(
    x: &Matrix,
    labels: &[bool],
    l2: f64,
    opts: LogisticOptions,
) -> Result<LogisticModel> {
    let (n, p) = (x.rows(), x.cols());
    if labels.len() != n {
        bail!(Shape, "x has {} rows but labels has {}", n, labels.len());
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        bail!(
            Degenerate,
            "logistic regression needs both classes, got {} positives out of {}",
            positives,
            n
        );
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        bail!(Config, "l2 must be finite and >= 0, got {}", l2);
    }
    let k = p + 1;
    let mut w = alloc::vec![0.0; p];
    let rate = positives as f64 / n as f64;
    let mut b = libm::log(rate / (1.0 - rate));
    let mut loss = objective(x, labels, &w, b, l2);
    let mut history = alloc::vec![loss];
    let mut converged = false;
    let mut iterations = 0;

    let mut grad = alloc::vec![0.0; k];
    let mut hess = alloc::vec![0.0; k * k];
    let mut row = alloc::vec![0.0; k];
    for _ in 0..opts.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        for (i, &l) in labels.iter().enumerate() {
            row[..p].copy_from_slice(x.row(i));
            row[p] = 1.0;
            let prob = sigmoid(dot(&w, x.row(i)) + b);
            let r = prob - if l { 1.0 } else { 0.0 };
            let h = prob * (1.0 - prob);
            for j in 0..k {
                grad[j] += r * row[j];
                let hj = h * row[j];
                for m in j..k {
                    hess[j * k + m] += hj * row[m];
                }
            }
        }
        for j in 0..p {
            grad[j] += l2 * w[j];
            hess[j * k + j] += l2;
        }
        for j in 0..k {
            for m in 0..j {
                hess[j * k + m] = hess[m * k + j];
            }
        }
        // Per-sample scale, so the tolerance does not depend on n.
        let gnorm = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs())) / n as f64;
        if gnorm < opts.tol {
            converged = true;
            break;
        }
        let step = match solve_spd(&hess, &grad) {
            Ok(s) => s,
            Err(_) => {
                // Separable or collinear design: add a small jitter.
                let mut jittered = hess.clone();
                let scale = (0..k)
                    .map(|j| hess[j * k + j])
                    .fold(0.0f64, f64::max)
                    .max(1.0);
                for j in 0..k {
                    jittered[j * k + j] += 1e-10 * scale;
                }
                solve_spd(&jittered, &grad)?
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        let mut stalled = false;
        for _ in 0..40 {
            let w_new: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - t * si).collect();
            let b_new = b - t * step[p];
            let l_new = objective(x, labels, &w_new, b_new, l2);
            if l_new <= loss {
                stalled = loss - l_new <= 1e-14 * loss.abs().max(1.0);
                w = w_new;
                b = b_new;
                loss = l_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No descent possible at machine precision.
            converged = gnorm < opts.tol.max(1e-6);
            break;
        }
        history.push(loss);
        if stalled {
            // The objective no longer resolves the remaining gradient.
            converged = true;
            break;
        }
    }
    Ok(LogisticModel {
        weights: w,
        intercept: b,
        l2,
        max_iter: opts.max_iter,
        tol: opts.tol,
        converged,
        iterations,
        loss_history: history,
    })
}

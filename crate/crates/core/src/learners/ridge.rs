use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::solve_spd;
use crate::matrix::{dot, Matrix};

/// Linear model minimising `|y - Xw - b|^2 + lambda |w|^2` (intercept not
/// penalised).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Fits ridge regression by solving the centred normal equations.
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 {
        bail!(Degenerate, "ridge needs at least one sample");
    }
    if y.len() != n {
        bail!(Shape, "x has {} rows but y has {}", n, y.len());
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        bail!(
            Config,
            "ridge lambda must be finite and >= 0, got {}",
            lambda
        );
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut x_mean = alloc::vec![0.0; p];
    for i in 0..n {
        for (m, v) in x_mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= nf);

    let mut gram = alloc::vec![0.0; p * p];
    let mut rhs = alloc::vec![0.0; p];
    let mut xc = alloc::vec![0.0; p];
    for i in 0..n {
        for (c, (v, m)) in xc.iter_mut().zip(x.row(i).iter().zip(&x_mean)) {
            *c = v - m;
        }
        let yc = y[i] - y_mean;
        for j in 0..p {
            rhs[j] += xc[j] * yc;
            for k in j..p {
                gram[j * p + k] += xc[j] * xc[k];
            }
        }
    }
    for j in 0..p {
        gram[j * p + j] += lambda;
        for k in 0..j {
            gram[j * p + k] = gram[k * p + j];
        }
    }
    let weights = solve_spd(&gram, &rhs).map_err(|_| {
        crate::Error::Numerical(alloc::format!(
            "ridge normal equations are singular (lambda = {lambda}); the design is rank deficient"
        ))
    })?;
    let intercept = y_mean - dot(&weights, &x_mean);
    Ok(RidgeModel {
        weights,
        intercept,
        lambda,
    })
}

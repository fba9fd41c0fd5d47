//! Supervised learners shared by candidate outcome models and nuisances.

mod calibrate;
mod gbt;
mod logistic;
mod ridge;
pub(crate) mod stack;

pub use calibrate::{platt_calibrate, PlattMap};
pub use gbt::{gbt_fit, GbtLoss, GbtModel, GbtParams, Tree, TreeNode};
pub use logistic::{logistic_fit, LogisticModel, LogisticOptions};
pub use ridge::{ridge_fit, RidgeModel};
pub use stack::{simplex_least_squares, stack_fit, BaseModel, BaseSpec, StackTarget, StackedModel};

use alloc::vec::Vec;

/// Mean squared error.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Brier score of probabilities against binary labels.
pub fn brier(prob: &[f64], labels: &[bool]) -> f64 {
    prob.iter()
        .zip(labels)
        .map(|(p, &l)| {
            let d = p - if l { 1.0 } else { 0.0 };
            d * d
        })
        .sum::<f64>()
        / prob.len() as f64
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + libm::exp(-t))
    } else {
        let e = libm::exp(t);
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + libm::log1p(libm::exp(-t))
    } else {
        libm::log1p(libm::exp(t))
    }
}

pub(crate) fn labels_to_f64(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect()
}

//! Platt scaling: a one-dimensional logistic map from scores to probabilities.

use super::{logistic_fit, sigmoid, LogisticOptions};
use crate::error::Result;
use crate::matrix::Matrix;

const PLATT_L2: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlattMap {
    pub slope: f64,
    pub intercept: f64,
}

impl PlattMap {
    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(self.slope * score + self.intercept)
    }
}

/// Fits `P(label | score) = sigmoid(slope * score + intercept)`. The slope is
/// constrained non-negative so the map never reverses the score order.
pub fn platt_calibrate(scores: &[f64], labels: &[bool]) -> Result<PlattMap> {
    let x = Matrix::new(scores.len(), 1, scores.to_vec())?;
    let model = logistic_fit(&x, labels, PLATT_L2, LogisticOptions::default())?;
    if model.weights[0] >= 0.0 {
        return Ok(PlattMap {
            slope: model.weights[0],
            intercept: model.intercept,
        });
    }
    let empty = Matrix::zeros(scores.len(), 0);
    let flat = logistic_fit(&empty, labels, PLATT_L2, LogisticOptions::default())?;
    Ok(PlattMap {
        slope: 0.0,
        intercept: flat.intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use alloc::vec::Vec;

    #[test]
    fn recovers_slope() {
        let mut rng = SimRng::new(9);
        let n = 10_000;
        let s: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let l: Vec<bool> = s
            .iter()
            .map(|&v| rng.bernoulli(sigmoid(2.0 * v - 0.5)))
            .collect();
        let m = platt_calibrate(&s, &l).unwrap();
        assert!((m.slope - 2.0).abs() < 0.3, "slope {}", m.slope);
        assert!((m.intercept + 0.5).abs() < 0.15);
    }

    #[test]
    fn reversed_scores_give_flat_map() {
        let s: Vec<f64> = (0..200).map(|i| i as f64 / 100.0).collect();
        let l: Vec<bool> = (0..200).map(|i| i < 120 || i % 7 == 0).collect();
        let m = platt_calibrate(&s, &l).unwrap();
        assert_eq!(m.slope, 0.0);
        let rate = l.iter().filter(|&&b| b).count() as f64 / 200.0;
        assert!((m.apply(1.0) - rate).abs() < 1e-6);
    }

    #[test]
    fn monotone() {
        let m = PlattMap {
            slope: 1.3,
            intercept: 0.2,
        };
        assert!(m.apply(-1.0) < m.apply(0.0) && m.apply(0.0) < m.apply(1.0));
    }
}

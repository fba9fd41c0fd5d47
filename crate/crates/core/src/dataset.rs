//! Observational datasets `(X, A, Y)` with optional ground truth.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::matrix::Matrix;

/// Ground-truth columns, available for simulated data only.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Oracle {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// True propensity `P(A = 1 | x)`.
    pub e: Vec<f64>,
    /// Always `mu1 - mu0`.
    pub cate: Vec<f64>,
}

impl Oracle {
    /// Builds the oracle block, deriving `cate` as `mu1 - mu0`.
    pub fn from_responses(mu0: Vec<f64>, mu1: Vec<f64>, e: Vec<f64>) -> Self {
        let cate = mu0.iter().zip(&mu1).map(|(m0, m1)| m1 - m0).collect();
        Oracle { mu0, mu1, e, cate }
    }

    fn select(&self, idx: &[usize]) -> Oracle {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Oracle {
            mu0: pick(&self.mu0),
            mu1: pick(&self.mu1),
            e: pick(&self.e),
            cate: pick(&self.cate),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub x: Matrix,
    pub treatment: Vec<bool>,
    pub y: Vec<f64>,
    pub oracle: Option<Oracle>,
    /// Outcome noise standard deviation, when known.
    pub sigma_noise: Option<f64>,
}

impl Dataset {
    /// Validates shapes, finiteness and the oracle invariants.
    pub fn new(
        x: Matrix,
        treatment: Vec<bool>,
        y: Vec<f64>,
        oracle: Option<Oracle>,
        sigma_noise: Option<f64>,
    ) -> Result<Self> {
        let n = x.rows();
        if treatment.len() != n || y.len() != n {
            bail!(
                Shape,
                "x has {} rows, a has {}, y has {}",
                n,
                treatment.len(),
                y.len()
            );
        }
        if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
            bail!(
                Data,
                "non-finite covariate at row {} column x_{}",
                i / x.cols().max(1),
                i % x.cols().max(1)
            );
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            bail!(Data, "non-finite outcome y at row {}", i);
        }
        if let Some(o) = &oracle {
            for (name, col) in [
                ("mu_0", &o.mu0),
                ("mu_1", &o.mu1),
                ("e", &o.e),
                ("cate", &o.cate),
            ] {
                if col.len() != n {
                    bail!(
                        Shape,
                        "oracle column {} has {} rows, expected {}",
                        name,
                        col.len(),
                        n
                    );
                }
                if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                    bail!(Data, "non-finite oracle {} at row {}", name, i);
                }
            }
            if let Some(i) = o.e.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
                bail!(Data, "oracle propensity e outside (0,1) at row {}", i);
            }
        }
        if let Some(s) = sigma_noise {
            if !(s >= 0.0 && s.is_finite()) {
                bail!(Data, "noise level must be finite and >= 0, got {}", s);
            }
        }
        Ok(Dataset {
            x,
            treatment,
            y,
            oracle,
            sigma_noise,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a).count()
    }

    pub fn has_both_arms(&self) -> bool {
        let t = self.n_treated();
        t > 0 && t < self.n()
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment
            .iter()
            .map(|&a| if a { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn treated_rate(&self) -> f64 {
        self.n_treated() as f64 / self.n() as f64
    }

    pub fn oracle(&self) -> Result<&Oracle> {
        match &self.oracle {
            Some(o) => Ok(o),
            None => bail!(Data, "dataset has no oracle columns (mu_0, mu_1, e, cate)"),
        }
    }

    /// Row subset, in the order given.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            oracle: self.oracle.as_ref().map(|o| o.select(idx)),
            sigma_noise: self.sigma_noise,
        }
    }

    /// Indices of the rows in arm `treated`.
    pub fn arm_indices(&self, treated: bool) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.treatment[i] == treated)
            .collect()
    }

    pub(crate) fn require_both_arms(&self, what: &str) -> Result<()> {
        if !self.has_both_arms() {
            return Err(crate::Error::Degenerate(format!(
                "{what} needs both treatment arms, got {} treated out of {}",
                self.n_treated(),
                self.n()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_bad_shapes_and_values() {
        let x = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(Dataset::new(x.clone(), vec![true], vec![1.0, 2.0], None, None).is_err());
        assert!(Dataset::new(
            x.clone(),
            vec![true, false],
            vec![1.0, f64::NAN],
            None,
            None
        )
        .is_err());
        let bad = Oracle::from_responses(vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 1.0]);
        assert!(Dataset::new(
            x.clone(),
            vec![true, false],
            vec![1.0, 2.0],
            Some(bad),
            None
        )
        .is_err());
        let ok = Dataset::new(x, vec![true, false], vec![1.0, 2.0], None, None).unwrap();
        assert!(ok.has_both_arms());
        assert_eq!(ok.subset(&[1]).y, vec![2.0]);
    }
}

//! Dense factorizations.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{bail, Result};

/// Solves `a x = b` for a symmetric positive-definite `k x k` matrix given
/// row-major.
pub(crate) fn solve_spd(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let k = b.len();
    debug_assert_eq!(a.len(), k * k);
    if k == 0 {
        return Ok(Vec::new());
    }
    let m = DMatrix::from_row_slice(k, k, a);
    let chol = match m.cholesky() {
        Some(c) => c,
        None => bail!(Numerical, "system matrix is not positive definite"),
    };
    // Cholesky of an exactly singular matrix can succeed on rounding noise.
    let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
    let l = chol.l_dirty();
    if (0..k).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * scale) {
        bail!(Numerical, "system matrix is numerically singular");
    }
    let x = chol.solve(&DVector::from_column_slice(b));
    if x.iter().any(|v| !v.is_finite()) {
        bail!(Numerical, "non-finite solution");
    }
    Ok(x.iter().copied().collect())
}

/// Inverse square root of a symmetric positive semi-definite matrix, with
/// eigenvalues floored at `1e-12`.
pub(crate) fn inv_sqrt_psd(a: &[f64], k: usize) -> Vec<f64> {
    let (values, vectors) = symmetric_eigen(a, k);
    let mut out = alloc::vec![0.0; k * k];
    for (idx, &lambda) in values.iter().enumerate() {
        let s = 1.0 / libm::sqrt(lambda.max(1e-12));
        for i in 0..k {
            for j in 0..k {
                out[i * k + j] += s * vectors[i * k + idx] * vectors[j * k + idx];
            }
        }
    }
    // Enforce exact symmetry.
    for i in 0..k {
        for j in i + 1..k {
            let avg = 0.5 * (out[i * k + j] + out[j * k + i]);
            out[i * k + j] = avg;
            out[j * k + i] = avg;
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric row-major matrix.
/// Returns the eigenvalues and the eigenvectors as columns of a row-major
/// `k x k` matrix. Accurate to rounding even when off-diagonals are tiny,
/// where the QR-based solver in nalgebra 0.33 loses several digits.
fn symmetric_eigen(a: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = alloc::vec![0.0; k * k];
    for i in 0..k {
        v[i * k + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * k + j] * m[i * k + j])
            .sum();
        let diag: f64 = (0..k).map(|i| m[i * k + i] * m[i * k + i]).sum();
        if off <= f64::EPSILON * f64::EPSILON * diag || off == 0.0 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = m[p * k + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * k + q] - m[p * k + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for r in 0..k {
                    let (mrp, mrq) = (m[r * k + p], m[r * k + q]);
                    m[r * k + p] = c * mrp - s * mrq;
                    m[r * k + q] = s * mrp + c * mrq;
                }
                for r in 0..k {
                    let (mpr, mqr) = (m[p * k + r], m[q * k + r]);
                    m[p * k + r] = c * mpr - s * mqr;
                    m[q * k + r] = s * mpr + c * mqr;
                }
                for r in 0..k {
                    let (vrp, vrq) = (v[r * k + p], v[r * k + q]);
                    v[r * k + p] = c * vrp - s * vrq;
                    v[r * k + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..k).map(|i| m[i * k + i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn spd_solve() {
        let x = solve_spd(&[4.0, 1.0, 1.0, 3.0], &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
        assert!(solve_spd(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn inverse_root() {
        let a = vec![1.0, 0.3, 0.3, 1.0];
        let z = inv_sqrt_psd(&a, 2);
        // z a z = I
        let mut za = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                za[i * 2 + j] = (0..2).map(|k| z[i * 2 + k] * a[k * 2 + j]).sum();
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..2).map(|k| za[i * 2 + k] * z[k * 2 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_with_tiny_off_diagonals() {
        let (a, c) = (1.78e-12, 0.249);
        let m = [1.0, a, 0.0, a, 1.0, c, 0.0, c, 1.0];
        let (values, v) = symmetric_eigen(&m, 3);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3)
                    .map(|l| v[i * 3 + l] * values[l] * v[j * 3 + l])
                    .sum();
                assert!((r - m[i * 3 + j]).abs() < 1e-14, "{i}{j}: {r}");
            }
        }
    }
}

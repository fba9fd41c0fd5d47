//! Caussim: simulated observational data with known causal ground truth.
//!
//! Covariates come from a two-component Gaussian mixture. Each treatment arm
//! is a rotated Gaussian whose first axis is centred at `(1 - 2a) * theta`, so
//! `theta` directly controls how far apart treated and control populations
//! sit. Because both densities are known, the propensity `e(x)` follows from
//! Bayes' rule.
//!
//! The control response `mu0` and the effect `tau` are linear in an RBF
//! Nystroem featurization `z(x)` built on `D` representers drawn from the
//! covariate distribution:
//!
//! ```text
//! z(x)   = [exp(-gamma |x - b_d|^2)]_d · Z^T,   Z = K(b, b)^(-1/2)
//! mu0(x) = [z(x); 1] · beta_mu
//! tau(x) = [z(x); 1] · beta_tau
//! y      = mu0(x) + a tau(x) + eps,   eps ~ N(0, sigma^2)
//! ```

use alloc::format;
use alloc::vec::Vec;

use crate::dataset::{Dataset, Oracle};
use crate::error::{bail, Result};
use crate::linalg;
use crate::matrix::{dot, Matrix};
use crate::rng::{child_seed, SimRng};

/// Outcome noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Noise {
    /// Fixed standard deviation.
    Absolute(f64),
    /// Multiple of the standard deviation of `mu0` over the covariate
    /// distribution of the instance.
    RelativeToMu0(f64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SimConfig {
    pub seed: u64,
    /// Separation of the two arms along the first axis (0 = identical).
    pub theta: f64,
    /// Treatment prevalence.
    pub p_a: f64,
    pub n: usize,
    /// Covariate dimension.
    pub dim: usize,
    /// Number of representers in the response featurization.
    pub d_basis: usize,
    /// RBF bandwidth.
    pub gamma: f64,
    pub noise: Noise,
    /// Variance along the separating axis.
    pub sigma0_sq: f64,
    /// Variance along the remaining axes.
    pub sigma1_sq: f64,
    /// Standard deviation of the `beta_mu` and `beta_tau` coefficients.
    pub coef_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            theta: 1.0,
            p_a: 0.5,
            n: 5000,
            dim: 2,
            d_basis: 2,
            gamma: 1.0,
            noise: Noise::RelativeToMu0(0.1),
            sigma0_sq: 2.0,
            sigma1_sq: 5.0,
            coef_scale: 1.0,
        }
    }
}

impl SimConfig {
    pub fn new(seed: u64, theta: f64, n: usize) -> Self {
        SimConfig {
            seed,
            theta,
            n,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            bail!(Config, "n must be >= 2, got {}", self.n);
        }
        if !(self.p_a > 0.0 && self.p_a < 1.0) {
            bail!(Config, "p_a must lie in (0,1), got {}", self.p_a);
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            bail!(Config, "theta must be finite and >= 0, got {}", self.theta);
        }
        if self.dim == 0 || self.d_basis == 0 {
            bail!(Config, "dim and d_basis must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            bail!(Config, "gamma must be > 0, got {}", self.gamma);
        }
        if !(self.sigma0_sq > 0.0 && self.sigma1_sq > 0.0) {
            bail!(Config, "axis variances must be > 0");
        }
        if !(self.coef_scale >= 0.0 && self.coef_scale.is_finite()) {
            bail!(Config, "coef_scale must be finite and >= 0");
        }
        match self.noise {
            Noise::Absolute(s) | Noise::RelativeToMu0(s) if !(s >= 0.0 && s.is_finite()) => {
                bail!(Config, "noise level must be finite and >= 0, got {}", s)
            }
            _ => Ok(()),
        }
    }
}

/// Gaussian kernel `exp(-gamma |x - y|^2)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    libm::exp(-gamma * d2)
}

/// Nystroem RBF featurizer on a fixed set of representers.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RbfFeaturizer {
    representers: Matrix,
    gamma: f64,
    /// Root-inverse of the representer Gram matrix, `D x D`, symmetric.
    z_norm: Matrix,
}

impl RbfFeaturizer {
    pub fn new(representers: Matrix, gamma: f64) -> Result<Self> {
        if representers.rows() == 0 {
            bail!(Config, "RBF featurizer needs at least one representer");
        }
        if !(gamma > 0.0) {
            bail!(Config, "gamma must be > 0, got {}", gamma);
        }
        let k = representers.rows();
        let gram = gram_matrix(&representers, gamma);
        let z = linalg::inv_sqrt_psd(gram.as_slice(), k);
        Ok(RbfFeaturizer {
            representers,
            gamma,
            z_norm: Matrix::new(k, k, z)?,
        })
    }

    pub fn representers(&self) -> &Matrix {
        &self.representers
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn z_norm(&self) -> &Matrix {
        &self.z_norm
    }

    pub fn n_features(&self) -> usize {
        self.representers.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.representers.cols()
    }

    /// Writes `z(x)` into `out` (length `D`).
    pub fn transform_row(&self, x: &[f64], out: &mut [f64]) {
        let k = self.n_features();
        let mut kv = [0.0f64; 16];
        let mut heap;
        let kvec: &mut [f64] = if k <= 16 {
            &mut kv[..k]
        } else {
            heap = alloc::vec![0.0; k];
            &mut heap[..]
        };
        for (d, slot) in kvec.iter_mut().enumerate() {
            *slot = rbf_kernel(x, self.representers.row(d), self.gamma);
        }
        // z = k · Z^T, i.e. z_i = sum_j k_j Z_ij
        for (i, o) in out.iter_mut().enumerate().take(k) {
            *o = dot(kvec, self.z_norm.row(i));
        }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            bail!(
                Shape,
                "featurizer expects {} columns, got {}",
                self.input_dim(),
                x.cols()
            );
        }
        let k = self.n_features();
        let mut out = Matrix::zeros(x.rows(), k);
        for i in 0..x.rows() {
            self.transform_row(x.row(i), out.row_mut(i));
        }
        Ok(out)
    }
}

pub(crate) fn gram_matrix(points: &Matrix, gamma: f64) -> Matrix {
    let k = points.rows();
    let mut g = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            g.set(i, j, rbf_kernel(points.row(i), points.row(j), gamma));
        }
    }
    g
}

/// Response surfaces `mu0` and `tau` of one Caussim instance.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResponseSurface {
    pub featurizer: RbfFeaturizer,
    /// `D + 1` coefficients, intercept last.
    pub beta_mu: Vec<f64>,
    pub beta_tau: Vec<f64>,
}

impl ResponseSurface {
    fn linear(beta: &[f64], z: &[f64]) -> f64 {
        let d = z.len();
        dot(&beta[..d], z) + beta[d]
    }

    /// `(mu0(x), tau(x))`.
    pub fn evaluate(&self, x: &[f64]) -> (f64, f64) {
        let mut z = alloc::vec![0.0; self.featurizer.n_features()];
        self.featurizer.transform_row(x, &mut z);
        (
            Self::linear(&self.beta_mu, &z),
            Self::linear(&self.beta_tau, &z),
        )
    }
}

/// `z(x)` for every row of `x`.
pub fn rbf_featurize(x: &Matrix, surface: &ResponseSurface) -> Result<Matrix> {
    surface.featurizer.transform(x)
}

/// The two-Gaussian covariate mixture.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mixture {
    /// Orthogonal `dim x dim` rotation `W`.
    pub rotation: Matrix,
    pub theta: f64,
    pub p_a: f64,
    /// Per-axis variances before rotation.
    pub variances: Vec<f64>,
}

impl Mixture {
    fn center(&self, treated: bool, axis: usize) -> f64 {
        if axis == 0 {
            if treated {
                -self.theta
            } else {
                self.theta
            }
        } else {
            0.0
        }
    }

    /// Draws `(x, a)`.
    pub fn draw(&self, rng: &mut SimRng, out: &mut [f64]) -> bool {
        let treated = rng.bernoulli(self.p_a);
        let d = self.variances.len();
        let mut u = alloc::vec![0.0; d];
        for (j, uj) in u.iter_mut().enumerate() {
            *uj = self.center(treated, j) + libm::sqrt(self.variances[j]) * rng.normal();
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.rotation.row(i), &u);
        }
        treated
    }

    /// `log N1(x) - log N0(x)`; the Gaussian normalizers cancel.
    pub fn log_density_ratio(&self, x: &[f64]) -> f64 {
        let d = self.variances.len();
        let mut lr = 0.0;
        for j in 0..d {
            // u = W^T x
            let uj: f64 = (0..d).map(|i| self.rotation.get(i, j) * x[i]).sum();
            let (m1, m0) = (self.center(true, j), self.center(false, j));
            lr += ((uj - m0) * (uj - m0) - (uj - m1) * (uj - m1)) / (2.0 * self.variances[j]);
        }
        lr
    }
}

const E_FLOOR: f64 = 1e-300;
const E_CEIL: f64 = 1.0 - 1e-16;

/// `P(A = 1 | x)` from Bayes' rule over the mixture, clamped to
/// `[1e-300, 1 - 1e-16]`.
pub fn oracle_propensity(x: &[f64], mixture: &Mixture) -> f64 {
    let lr = mixture.log_density_ratio(x);
    let p = mixture.p_a;
    if lr == 0.0 {
        return p;
    }
    let e = if lr >= 0.0 {
        1.0 / (1.0 + (1.0 - p) / p * libm::exp(-lr))
    } else {
        let t = p / (1.0 - p) * libm::exp(lr);
        t / (1.0 + t)
    };
    e.clamp(E_FLOOR, E_CEIL)
}

fn random_rotation(dim: usize, rng: &mut SimRng) -> Matrix {
    match dim {
        1 => Matrix::new(1, 1, alloc::vec![1.0]).expect("1x1"),
        2 => {
            let phi = 2.0 * core::f64::consts::PI * rng.uniform();
            let (s, c) = (libm::sin(phi), libm::cos(phi));
            Matrix::new(2, 2, alloc::vec![c, -s, s, c]).expect("2x2")
        }
        _ => {
            // Modified Gram-Schmidt on the columns of a Gaussian matrix.
            let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
            while cols.len() < dim {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                for c in &cols {
                    let proj = dot(&v, c);
                    for (vi, ci) in v.iter_mut().zip(c) {
                        *vi -= proj * ci;
                    }
                }
                let norm = libm::sqrt(dot(&v, &v));
                if norm < 1e-8 {
                    continue;
                }
                v.iter_mut().for_each(|vi| *vi /= norm);
                cols.push(v);
            }
            let mut w = Matrix::zeros(dim, dim);
            for (j, c) in cols.iter().enumerate() {
                for (i, &ci) in c.iter().enumerate() {
                    w.set(i, j, ci);
                }
            }
            w
        }
    }
}

// Child stream indices of an instance seed.
const STREAM_STRUCTURE: u64 = 0;
const STREAM_NOISE_REFERENCE: u64 = 1;
const STREAM_SAMPLE: u64 = 2;

const NOISE_REFERENCE_SIZE: usize = 10_000;

/// One fully specified Caussim instance: mixture, response surfaces and
/// noise level, all derived from `SimConfig::seed`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Caussim {
    pub config: SimConfig,
    pub mixture: Mixture,
    pub surface: ResponseSurface,
    pub sigma_noise: f64,
}

impl Caussim {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SimRng::child(config.seed, STREAM_STRUCTURE);
        let mut variances = alloc::vec![config.sigma1_sq; config.dim];
        variances[0] = config.sigma0_sq;
        let mixture = Mixture {
            rotation: random_rotation(config.dim, &mut rng),
            theta: config.theta,
            p_a: config.p_a,
            variances,
        };
        let mut reps = Matrix::zeros(config.d_basis, config.dim);
        for d in 0..config.d_basis {
            mixture.draw(&mut rng, reps.row_mut(d));
        }
        let featurizer = RbfFeaturizer::new(reps, config.gamma)?;
        let beta = |rng: &mut SimRng| -> Vec<f64> {
            (0..=config.d_basis)
                .map(|_| config.coef_scale * rng.normal())
                .collect()
        };
        let beta_mu = beta(&mut rng);
        let beta_tau = beta(&mut rng);
        let surface = ResponseSurface {
            featurizer,
            beta_mu,
            beta_tau,
        };

        let sigma_noise = match config.noise {
            Noise::Absolute(s) => s,
            Noise::RelativeToMu0(r) => {
                let mut rng = SimRng::child(config.seed, STREAM_NOISE_REFERENCE);
                let mut x = alloc::vec![0.0; config.dim];
                let mu0: Vec<f64> = (0..NOISE_REFERENCE_SIZE)
                    .map(|_| {
                        mixture.draw(&mut rng, &mut x);
                        surface.evaluate(&x).0
                    })
                    .collect();
                r * sample_sd(&mu0)
            }
        };
        Ok(Caussim {
            config,
            mixture,
            surface,
            sigma_noise,
        })
    }

    /// Draws `n` rows from a stream seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            bail!(Config, "cannot sample an empty dataset");
        }
        let d = self.config.dim;
        let mut rng = SimRng::new(seed);
        let mut x = Matrix::zeros(n, d);
        let mut treatment = Vec::with_capacity(n);
        let (mut mu0, mut mu1, mut e) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.mixture.draw(&mut rng, x.row_mut(i));
            let row = x.row(i);
            let (m0, tau) = self.surface.evaluate(row);
            let m1 = m0 + tau;
            let eps = self.sigma_noise * rng.normal();
            treatment.push(a);
            e.push(oracle_propensity(row, &self.mixture));
            y.push(if a { m1 } else { m0 } + eps);
            mu0.push(m0);
            mu1.push(m1);
        }
        let oracle = Oracle::from_responses(mu0, mu1, e);
        Dataset::new(x, treatment, y, Some(oracle), Some(self.sigma_noise))
            .map_err(|err| crate::Error::Numerical(format!("simulated data invalid: {err}")))
    }

    /// The dataset described by the configuration (`config.n` rows).
    pub fn dataset(&self) -> Result<Dataset> {
        self.sample(self.config.n, child_seed(self.config.seed, STREAM_SAMPLE))
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = crate::matrix::mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
    libm::sqrt(var)
}

/// Generates the dataset for `cfg`; a pure function of the configuration.
pub fn simulate(cfg: &SimConfig) -> Result<Dataset> {
    Caussim::new(cfg.clone())?.dataset()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn gaussian_pdf(x: &[f64], mean: &[f64], cov: &[[f64; 2]; 2]) -> f64 {
        // Independent 2-d density: explicit inverse and determinant.
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        let d = [x[0] - mean[0], x[1] - mean[1]];
        let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1])
            + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
        libm::exp(-0.5 * q) / (2.0 * core::f64::consts::PI * libm::sqrt(det))
    }

    #[test]
    fn propensity_matches_direct_density_ratio() {
        let inst = Caussim::new(SimConfig {
            theta: 1.0,
            p_a: 0.3,
            ..SimConfig::new(5, 1.0, 10)
        })
        .unwrap();
        let w = &inst.mixture.rotation;
        // Rotated means and covariances W m, W S W^T.
        let rot = |v: [f64; 2]| {
            [
                w.get(0, 0) * v[0] + w.get(0, 1) * v[1],
                w.get(1, 0) * v[0] + w.get(1, 1) * v[1],
            ]
        };
        let m1 = rot([-1.0, 0.0]);
        let m0 = rot([1.0, 0.0]);
        let mut cov = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] = w.get(i, 0) * 2.0 * w.get(j, 0) + w.get(i, 1) * 5.0 * w.get(j, 1);
            }
        }
        let mut rng = SimRng::new(99);
        for _ in 0..200 {
            let x = [rng.uniform_range(-4.0, 4.0), rng.uniform_range(-4.0, 4.0)];
            let n1 = gaussian_pdf(&x, &m1, &cov);
            let n0 = gaussian_pdf(&x, &m0, &cov);
            let expect = 0.3 * n1 / (0.3 * n1 + 0.7 * n0);
            let got = oracle_propensity(&x, &inst.mixture);
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn propensity_symmetry_cases() {
        let inst = Caussim::new(SimConfig::new(1, 1.5, 10)).unwrap();
        // A point on the perpendicular bisector: rotate (0, t).
        let w = &inst.mixture.rotation;
        let x = [w.get(0, 1) * 0.7, w.get(1, 1) * 0.7];
        assert!((oracle_propensity(&x, &inst.mixture) - 0.5).abs() < 1e-12);

        let flat = Caussim::new(SimConfig {
            p_a: 0.37,
            ..SimConfig::new(1, 0.0, 10)
        })
        .unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [-10.0, 4.0]] {
            assert_eq!(oracle_propensity(&x, &flat.mixture), 0.37);
        }
    }

    #[test]
    fn single_representer_kernel_values() {
        let b = Matrix::new(1, 2, vec![0.5, -1.0]).unwrap();
        let f = RbfFeaturizer::new(b, 2.0).unwrap();
        assert!((f.z_norm().get(0, 0) - 1.0).abs() < 1e-15);
        let mut z = [0.0];
        f.transform_row(&[0.5, -1.0], &mut z);
        assert!((z[0] - 1.0).abs() < 1e-15);
        // gamma |x - b|^2 = ln 2
        let r = libm::sqrt(libm::log(2.0) / 2.0);
        f.transform_row(&[0.5 + r, -1.0], &mut z);
        assert!((z[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn featurized_representers_reconstruct_gram() {
        let inst = Caussim::new(SimConfig::new(3, 1.0, 10)).unwrap();
        let f = &inst.surface.featurizer;
        let z = f.transform(f.representers()).unwrap();
        let g = gram_matrix(f.representers(), f.gamma());
        for i in 0..2 {
            for j in 0..2 {
                assert!((dot(z.row(i), z.row(j)) - g.get(i, j)).abs() < 1e-8);
            }
        }
        // Z K Z = I and Z symmetric.
        let zn = f.z_norm();
        assert_eq!(zn.get(0, 1), zn.get(1, 0));
        let zkz = zn.matmul(&g).unwrap().matmul(zn).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((zkz.get(i, j) - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn simulate_is_deterministic_and_consistent() {
        let cfg = SimConfig::new(42, 1.2, 500);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        let o = a.oracle.as_ref().unwrap();
        for i in 0..a.n() {
            assert_eq!(o.cate[i], o.mu1[i] - o.mu0[i]);
            assert!(o.e[i] > 0.0 && o.e[i] < 1.0);
        }
    }

    #[test]
    fn theta_zero_gives_constant_propensity() {
        let d = simulate(&SimConfig {
            p_a: 0.3,
            ..SimConfig::new(8, 0.0, 300)
        })
        .unwrap();
        assert!(d.oracle.unwrap().e.iter().all(|&e| e == 0.3));
    }

    #[test]
    fn noise_sd_matches() {
        let d = simulate(&SimConfig::new(4, 1.0, 20_000)).unwrap();
        let o = d.oracle.as_ref().unwrap();
        let resid: Vec<f64> = (0..d.n())
            .map(|i| d.y[i] - if d.treatment[i] { o.mu1[i] } else { o.mu0[i] })
            .collect();
        let sd = sample_sd(&resid);
        let s = d.sigma_noise.unwrap();
        assert!(s > 0.0);
        assert!((sd / s - 1.0).abs() < 0.1, "{sd} vs {s}");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(simulate(&SimConfig {
            n: 1,
            ..SimConfig::default()
        })
        .is_err());
        assert!(simulate(&SimConfig {
            p_a: 1.0,
            ..SimConfig::default()
        })
        .is_err());
        assert!(simulate(&SimConfig {
            p_a: 0.0,
            ..SimConfig::default()
        })
        .is_err());
    }

    #[test]
    fn higher_dimensions_rotate_orthogonally() {
        let inst = Caussim::new(SimConfig {
            dim: 4,
            ..SimConfig::new(2, 1.0, 50)
        })
        .unwrap();
        let w = &inst.mixture.rotation;
        let wtw = w.transpose().matmul(w).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((wtw.get(i, j) - e).abs() < 1e-12);
            }
        }
        assert_eq!(inst.dataset().unwrap().dim(), 4);
    }
}

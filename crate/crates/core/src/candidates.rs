//! Candidate outcome models `f(x, a)` built from a meta-learner, an
//! optional RBF featurization and a regression head.
//!
//! * S-learner: one head on `[z(x), a]`.
//! * T-learner: a featurizer and a head per arm, each fitted on its arm only.
//! * Sft-learner: one featurizer fitted on all rows, one head per arm.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::datagen::RbfFeaturizer;
use crate::dataset::Dataset;
use crate::error::{bail, Result};
use crate::learners::{gbt_fit, ridge_fit, GbtLoss, GbtModel, GbtParams, RidgeModel};
use crate::matrix::Matrix;
use crate::rng::{child_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MetaLearner {
    SLearner,
    TLearner,
    SftLearner,
}

impl MetaLearner {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetaLearner::SLearner => "S",
            MetaLearner::TLearner => "T",
            MetaLearner::SftLearner => "Sft",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Featurization {
    Identity,
    /// Nystroem RBF features on `n_knots` training rows drawn with `seed`.
    Rbf {
        n_knots: usize,
        gamma: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Head {
    Ridge {
        lambda: f64,
    },
    /// Boosted regression trees; the loss is always squared.
    Gbt(GbtParams),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CandidateSpec {
    pub id: String,
    pub meta: MetaLearner,
    pub featurization: Featurization,
    pub head: Head,
}

impl CandidateSpec {
    pub fn new(meta: MetaLearner, featurization: Featurization, head: Head) -> Self {
        let mut spec = CandidateSpec {
            id: String::new(),
            meta,
            featurization,
            head,
        };
        spec.id = format!(
            "c{:016x}",
            fnv1a(spec.params().as_bytes()) ^ fnv1a(meta.as_str().as_bytes())
        );
        spec
    }

    /// Canonical parameter string, also used as the manifest `params` field.
    pub fn params(&self) -> String {
        let feat = match self.featurization {
            Featurization::Identity => String::from("identity"),
            Featurization::Rbf {
                n_knots,
                gamma,
                seed,
            } => format!("rbf(knots={n_knots};gamma={gamma:?};seed={seed})"),
        };
        let head = match self.head {
            Head::Ridge { lambda } => format!("ridge(lambda={lambda:?})"),
            Head::Gbt(p) => format!(
                "gbt(learning_rate={:?};max_leaf_nodes={};n_rounds={};min_samples_leaf={})",
                p.learning_rate, p.max_leaf_nodes, p.n_rounds, p.min_samples_leaf
            ),
        };
        format!("{feat}|{head}")
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CandidateFamily {
    pub name: String,
    pub members: Vec<CandidateSpec>,
    /// Hash over the ordered member ids.
    pub provenance: String,
}

impl CandidateFamily {
    pub fn new(name: &str, members: Vec<CandidateSpec>) -> Result<Self> {
        let mut ids: Vec<&str> = members.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            bail!(Config, "family {} has duplicate member ids", name);
        }
        let joined: String = members
            .iter()
            .map(|m| m.id.as_str())
            .collect::<Vec<_>>()
            .join(",");
        let provenance = format!("{:016x}", fnv1a(joined.as_bytes()));
        Ok(CandidateFamily {
            name: String::from(name),
            members,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(|m| m.id.clone()).collect()
    }
}

pub const DEFAULT_RIDGE_LAMBDAS: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2];
pub const DEFAULT_GBT_LEARNING_RATES: [f64; 3] = [0.01, 0.1, 1.0];
pub const DEFAULT_GBT_LEAVES: [usize; 6] = [25, 27, 30, 32, 35, 40];

/// Ridge-on-random-basis family: for each basis, T- and Sft-learners at
/// every `lambda`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CaussimFamilyConfig {
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub n_bases: usize,
    pub n_knots: usize,
    pub gamma: f64,
}

impl Default for CaussimFamilyConfig {
    fn default() -> Self {
        CaussimFamilyConfig {
            seed: 0,
            lambdas: DEFAULT_RIDGE_LAMBDAS.to_vec(),
            n_bases: 10,
            n_knots: 2,
            gamma: 1.0,
        }
    }
}

pub fn caussim_family(cfg: &CaussimFamilyConfig) -> Result<CandidateFamily> {
    if cfg.n_knots == 0 || !(cfg.gamma > 0.0) {
        bail!(Config, "RBF candidates need n_knots >= 1 and gamma > 0");
    }
    let mut members = Vec::with_capacity(cfg.n_bases * 2 * cfg.lambdas.len());
    for b in 0..cfg.n_bases {
        let featurization = Featurization::Rbf {
            n_knots: cfg.n_knots,
            gamma: cfg.gamma,
            seed: child_seed(cfg.seed, b as u64),
        };
        for meta in [MetaLearner::TLearner, MetaLearner::SftLearner] {
            for &lambda in &cfg.lambdas {
                members.push(CandidateSpec::new(
                    meta,
                    featurization,
                    Head::Ridge { lambda },
                ));
            }
        }
    }
    CandidateFamily::new("caussim", members)
}

/// S-learner boosting family over a learning-rate by leaf-count grid.
pub fn gbt_family(learning_rates: &[f64], max_leaf_nodes: &[usize]) -> Result<CandidateFamily> {
    let mut members = Vec::new();
    for &lr in learning_rates {
        for &leaves in max_leaf_nodes {
            let params = GbtParams::new(GbtLoss::Squared, lr, leaves);
            params.validate()?;
            members.push(CandidateSpec::new(
                MetaLearner::SLearner,
                Featurization::Identity,
                Head::Gbt(params),
            ));
        }
    }
    CandidateFamily::new("gbt", members)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FittedFeaturizer {
    Identity,
    Rbf(RbfFeaturizer),
}

impl FittedFeaturizer {
    fn fit(featurization: &Featurization, x: &Matrix, salt: u64) -> Result<Self> {
        match *featurization {
            Featurization::Identity => Ok(FittedFeaturizer::Identity),
            Featurization::Rbf {
                n_knots,
                gamma,
                seed,
            } => {
                if x.rows() < n_knots {
                    bail!(
                        Degenerate,
                        "{} rows cannot supply {} knots",
                        x.rows(),
                        n_knots
                    );
                }
                let mut rng = SimRng::child(seed, salt);
                let idx = rng.sample_without_replacement(x.rows(), n_knots);
                Ok(FittedFeaturizer::Rbf(RbfFeaturizer::new(
                    x.select_rows(&idx),
                    gamma,
                )?))
            }
        }
    }

    fn n_features(&self, dim: usize) -> usize {
        match self {
            FittedFeaturizer::Identity => dim,
            FittedFeaturizer::Rbf(f) => f.n_features(),
        }
    }

    fn write_row(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FittedFeaturizer::Identity => out[..x.len()].copy_from_slice(x),
            FittedFeaturizer::Rbf(f) => f.transform_row(x, out),
        }
    }

    /// Features of every row, with an optional trailing constant column.
    fn transform(&self, x: &Matrix, extra: Option<f64>) -> Matrix {
        let k = self.n_features(x.cols());
        let width = k + extra.is_some() as usize;
        let mut out = Matrix::zeros(x.rows(), width);
        for i in 0..x.rows() {
            let row = out.row_mut(i);
            self.write_row(x.row(i), &mut row[..k]);
            if let Some(v) = extra {
                row[k] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FittedHead {
    Ridge(RidgeModel),
    Gbt(GbtModel),
}

impl FittedHead {
    fn fit(head: &Head, z: &Matrix, y: &[f64]) -> Result<Self> {
        match *head {
            Head::Ridge { lambda } => Ok(FittedHead::Ridge(ridge_fit(z, y, lambda)?)),
            Head::Gbt(p) => Ok(FittedHead::Gbt(gbt_fit(
                z,
                y,
                GbtParams {
                    loss: GbtLoss::Squared,
                    ..p
                },
            )?)),
        }
    }

    fn predict_row(&self, z: &[f64]) -> f64 {
        match self {
            FittedHead::Ridge(m) => m.predict_row(z),
            FittedHead::Gbt(m) => m.predict_row(z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
enum Parts {
    Single {
        featurizer: FittedFeaturizer,
        head: FittedHead,
    },
    PerArm {
        featurizers: [FittedFeaturizer; 2],
        heads: [FittedHead; 2],
    },
    SharedBasis {
        featurizer: FittedFeaturizer,
        heads: [FittedHead; 2],
    },
}

/// A fitted candidate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OutcomeModel {
    pub spec: CandidateSpec,
    dim: usize,
    parts: Parts,
}

/// Both potential-outcome predictions of a model on a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePredictions {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl ResponsePredictions {
    pub fn new(mu0: Vec<f64>, mu1: Vec<f64>) -> Result<Self> {
        if mu0.len() != mu1.len() {
            bail!(
                Shape,
                "mu0 has {} rows but mu1 has {}",
                mu0.len(),
                mu1.len()
            );
        }
        Ok(ResponsePredictions { mu0, mu1 })
    }

    /// The oracle response pair of a simulated dataset.
    pub fn oracle(data: &Dataset) -> Result<Self> {
        let o = data.oracle()?;
        Ok(ResponsePredictions {
            mu0: o.mu0.clone(),
            mu1: o.mu1.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.mu0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu0.is_empty()
    }

    pub fn cate(&self) -> Vec<f64> {
        self.mu0
            .iter()
            .zip(&self.mu1)
            .map(|(m0, m1)| m1 - m0)
            .collect()
    }

    /// `f(x_i, a_i)`.
    pub fn observed(&self, treatment: &[bool]) -> Vec<f64> {
        treatment
            .iter()
            .enumerate()
            .map(|(i, &a)| if a { self.mu1[i] } else { self.mu0[i] })
            .collect()
    }
}

impl OutcomeModel {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn predict_row(&self, x: &[f64], treated: bool) -> f64 {
        let arm = treated as usize;
        let mut z = alloc::vec![0.0; self.max_width()];
        match &self.parts {
            Parts::Single { featurizer, head } => {
                let k = featurizer.n_features(self.dim);
                featurizer.write_row(x, &mut z[..k]);
                z[k] = if treated { 1.0 } else { 0.0 };
                head.predict_row(&z[..k + 1])
            }
            Parts::PerArm { featurizers, heads } => {
                let k = featurizers[arm].n_features(self.dim);
                featurizers[arm].write_row(x, &mut z[..k]);
                heads[arm].predict_row(&z[..k])
            }
            Parts::SharedBasis { featurizer, heads } => {
                let k = featurizer.n_features(self.dim);
                featurizer.write_row(x, &mut z[..k]);
                heads[arm].predict_row(&z[..k])
            }
        }
    }

    fn max_width(&self) -> usize {
        match &self.parts {
            Parts::Single { featurizer, .. } => featurizer.n_features(self.dim) + 1,
            Parts::PerArm { featurizers, .. } => featurizers[0]
                .n_features(self.dim)
                .max(featurizers[1].n_features(self.dim)),
            Parts::SharedBasis { featurizer, .. } => featurizer.n_features(self.dim),
        }
    }

    pub fn predict(&self, x: &Matrix, treated: bool) -> Vec<f64> {
        (0..x.rows())
            .map(|i| self.predict_row(x.row(i), treated))
            .collect()
    }

    pub fn predict_responses(&self, x: &Matrix) -> Result<ResponsePredictions> {
        if x.cols() != self.dim {
            bail!(
                Shape,
                "model expects {} covariates, got {}",
                self.dim,
                x.cols()
            );
        }
        Ok(ResponsePredictions {
            mu0: self.predict(x, false),
            mu1: self.predict(x, true),
        })
    }

    /// `tau_f(x) = f(x, 1) - f(x, 0)` for every row.
    pub fn cate(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows())
            .map(|i| self.predict_row(x.row(i), true) - self.predict_row(x.row(i), false))
            .collect()
    }
}

/// Fits one candidate on `train`.
pub fn fit_candidate(spec: &CandidateSpec, train: &Dataset) -> Result<OutcomeModel> {
    let dim = train.dim();
    let parts = match spec.meta {
        MetaLearner::SLearner => {
            let featurizer = FittedFeaturizer::fit(&spec.featurization, &train.x, 0)?;
            let mut z = featurizer.transform(&train.x, Some(0.0));
            let k = z.cols() - 1;
            for (i, &a) in train.treatment.iter().enumerate() {
                z.set(i, k, if a { 1.0 } else { 0.0 });
            }
            Parts::Single {
                head: FittedHead::fit(&spec.head, &z, &train.y)?,
                featurizer,
            }
        }
        MetaLearner::TLearner => {
            train.require_both_arms("a T-learner")?;
            let fit_arm = |treated: bool| -> Result<(FittedFeaturizer, FittedHead)> {
                let arm = train.subset(&train.arm_indices(treated));
                let f = FittedFeaturizer::fit(&spec.featurization, &arm.x, 1 + treated as u64)?;
                let head = FittedHead::fit(&spec.head, &f.transform(&arm.x, None), &arm.y)?;
                Ok((f, head))
            };
            let (f0, h0) = fit_arm(false)?;
            let (f1, h1) = fit_arm(true)?;
            Parts::PerArm {
                featurizers: [f0, f1],
                heads: [h0, h1],
            }
        }
        MetaLearner::SftLearner => {
            train.require_both_arms("an Sft-learner")?;
            let featurizer = FittedFeaturizer::fit(&spec.featurization, &train.x, 0)?;
            let fit_arm = |treated: bool| -> Result<FittedHead> {
                let idx = train.arm_indices(treated);
                let z = featurizer.transform(&train.x.select_rows(&idx), None);
                let y: Vec<f64> = idx.iter().map(|&i| train.y[i]).collect();
                FittedHead::fit(&spec.head, &z, &y)
            };
            let heads = [fit_arm(false)?, fit_arm(true)?];
            Parts::SharedBasis { featurizer, heads }
        }
    };
    Ok(OutcomeModel {
        spec: spec.clone(),
        dim,
        parts,
    })
}

/// Plug-in ATE: the mean of `tau_f` over the rows of `x`.
pub fn estimate_ate(model: &OutcomeModel, x: &Matrix) -> Result<f64> {
    if x.rows() == 0 {
        bail!(Domain, "cannot estimate an ATE on zero rows");
    }
    let cate = model.cate(x);
    Ok(cate.iter().sum::<f64>() / cate.len() as f64)
}

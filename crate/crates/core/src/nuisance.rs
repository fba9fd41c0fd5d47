//! Nuisance models: the propensity `e(x) = P(A = 1 | x)` and the marginal
//! outcome mean `m(x) = E[Y | x]`.

use alloc::vec::Vec;

use crate::cv::{kfold, sample_grid, stratified_kfold};
use crate::dataset::Dataset;
use crate::error::{bail, Result};
use crate::learners::{
    stack_fit, BaseModel, BaseSpec, GbtLoss, GbtParams, LogisticModel, RidgeModel, StackTarget,
    StackedModel,
};
use crate::matrix::Matrix;
use crate::rng::{child_seed, SimRng};

pub const DEFAULT_ETA: f64 = 1e-10;

/// Where a nuisance pair comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NuisanceSource {
    Oracle,
    Linear,
    Stacked,
}

impl NuisanceSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            NuisanceSource::Oracle => "oracle",
            NuisanceSource::Linear => "linear",
            NuisanceSource::Stacked => "stacked",
        }
    }
}

/// Search spaces and budgets for fitted nuisances.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct NuisanceConfig {
    /// Random-search draws per model.
    pub hp_budget: usize,
    pub cv_folds: usize,
    pub stack_folds: usize,
    pub eta: f64,
    pub ridge_lambdas: Vec<f64>,
    /// Inverse penalties `C`; the fitted penalty is `1 / C`.
    pub logistic_c: Vec<f64>,
    pub gbt_learning_rates: Vec<f64>,
    pub gbt_leaves: Vec<usize>,
    pub gbt_rounds: usize,
    pub gbt_min_samples_leaf: usize,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        let grid = alloc::vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];
        NuisanceConfig {
            hp_budget: 10,
            cv_folds: 5,
            stack_folds: 5,
            eta: DEFAULT_ETA,
            ridge_lambdas: grid.clone(),
            logistic_c: grid,
            gbt_learning_rates: alloc::vec![0.01, 0.1, 1.0],
            gbt_leaves: alloc::vec![10, 20, 30, 50],
            gbt_rounds: 100,
            gbt_min_samples_leaf: 20,
        }
    }
}

impl NuisanceConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 0.5) {
            bail!(
                Config,
                "clipping eta must lie in (0, 0.5), got {}",
                self.eta
            );
        }
        if self.hp_budget == 0 {
            bail!(Config, "hp_budget must be at least 1");
        }
        if self.ridge_lambdas.is_empty() || self.logistic_c.is_empty() {
            bail!(Config, "empty linear hyper-parameter grid");
        }
        if self.logistic_c.iter().any(|&c| !(c > 0.0)) {
            bail!(Config, "logistic C must be > 0");
        }
        Ok(())
    }

    fn gbt_grid(&self, loss: GbtLoss) -> Vec<BaseSpec> {
        let mut out = Vec::new();
        for &lr in &self.gbt_learning_rates {
            for &leaves in &self.gbt_leaves {
                out.push(BaseSpec::Gbt(
                    GbtParams::new(loss, lr, leaves)
                        .with_rounds(self.gbt_rounds)
                        .with_min_samples_leaf(self.gbt_min_samples_leaf),
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PropensityModel {
    /// Read the true propensity from the evaluation rows.
    Oracle,
    Logistic(LogisticModel),
    Stacked(StackedModel),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MeanOutcomeModel {
    /// `e mu1 + (1 - e) mu0` from the evaluation rows.
    Oracle,
    Ridge(RidgeModel),
    Stacked(StackedModel),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NuisancePair {
    pub propensity: PropensityModel,
    pub mean_outcome: MeanOutcomeModel,
    pub eta: f64,
    pub source: NuisanceSource,
}

/// Nuisances evaluated on a set of rows; `e` is clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    pub e: Vec<f64>,
    pub m: Vec<f64>,
}

impl NuisancePair {
    pub fn evaluate(&self, data: &Dataset) -> Result<NuisanceValues> {
        let e_raw = match &self.propensity {
            PropensityModel::Oracle => data.oracle()?.e.clone(),
            PropensityModel::Logistic(m) => m.predict_proba(&data.x),
            PropensityModel::Stacked(m) => m.predict(&data.x),
        };
        let e = clip_propensity(&e_raw, self.eta);
        let m = match &self.mean_outcome {
            MeanOutcomeModel::Oracle => {
                let o = data.oracle()?;
                e.iter()
                    .zip(o.mu0.iter().zip(&o.mu1))
                    .map(|(e, (m0, m1))| e * m1 + (1.0 - e) * m0)
                    .collect()
            }
            MeanOutcomeModel::Ridge(m) => m.predict(&data.x),
            MeanOutcomeModel::Stacked(m) => m.predict(&data.x),
        };
        Ok(NuisanceValues { e, m })
    }
}

/// Maps each value into `[eta, 1 - eta]`.
pub fn clip_propensity(e: &[f64], eta: f64) -> Vec<f64> {
    e.iter().map(|&v| v.max(eta).min(1.0 - eta)).collect()
}

/// Passthrough of the true nuisances; errors when `data` has no oracle.
pub fn oracle_nuisances(data: &Dataset) -> Result<NuisancePair> {
    data.oracle()?;
    Ok(NuisancePair {
        propensity: PropensityModel::Oracle,
        mean_outcome: MeanOutcomeModel::Oracle,
        eta: DEFAULT_ETA,
        source: NuisanceSource::Oracle,
    })
}

/// Fits `(e, m)` on `train` only. `m` regresses `y` on `x` without the
/// treatment.
pub fn fit_nuisances(
    train: &Dataset,
    source: NuisanceSource,
    cfg: &NuisanceConfig,
    seed: u64,
) -> Result<NuisancePair> {
    cfg.validate()?;
    train.require_both_arms("nuisance fitting")?;
    let prop = StackTarget::Classification(&train.treatment);
    let outcome = StackTarget::Regression(&train.y);
    let (propensity, mean_outcome) = match source {
        NuisanceSource::Oracle => {
            return oracle_nuisances(train).map(|p| NuisancePair { eta: cfg.eta, ..p })
        }
        NuisanceSource::Linear => {
            let e_grid: Vec<BaseSpec> = cfg
                .logistic_c
                .iter()
                .map(|c| BaseSpec::Logistic { l2: 1.0 / c })
                .collect();
            let m_grid: Vec<BaseSpec> = cfg
                .ridge_lambdas
                .iter()
                .map(|&lambda| BaseSpec::Ridge { lambda })
                .collect();
            let e_spec = search(
                &e_grid,
                &train.x,
                prop,
                cfg.hp_budget,
                cfg.cv_folds,
                child_seed(seed, 0),
            )?;
            let m_spec = search(
                &m_grid,
                &train.x,
                outcome,
                cfg.hp_budget,
                cfg.cv_folds,
                child_seed(seed, 1),
            )?;
            let e = match BaseModel::fit(&e_spec, &train.x, prop)? {
                BaseModel::Logistic(m) => m,
                _ => unreachable!("logistic grid"),
            };
            let m = match BaseModel::fit(&m_spec, &train.x, outcome)? {
                BaseModel::Ridge(m) => m,
                _ => unreachable!("ridge grid"),
            };
            (PropensityModel::Logistic(e), MeanOutcomeModel::Ridge(m))
        }
        NuisanceSource::Stacked => {
            let e_lin: Vec<BaseSpec> = cfg
                .logistic_c
                .iter()
                .map(|c| BaseSpec::Logistic { l2: 1.0 / c })
                .collect();
            let m_lin: Vec<BaseSpec> = cfg
                .ridge_lambdas
                .iter()
                .map(|&lambda| BaseSpec::Ridge { lambda })
                .collect();
            let e_bases = [
                search(
                    &e_lin,
                    &train.x,
                    prop,
                    cfg.hp_budget,
                    cfg.cv_folds,
                    child_seed(seed, 2),
                )?,
                search(
                    &cfg.gbt_grid(GbtLoss::Logistic),
                    &train.x,
                    prop,
                    cfg.hp_budget,
                    cfg.cv_folds,
                    child_seed(seed, 3),
                )?,
            ];
            let m_bases = [
                search(
                    &m_lin,
                    &train.x,
                    outcome,
                    cfg.hp_budget,
                    cfg.cv_folds,
                    child_seed(seed, 4),
                )?,
                search(
                    &cfg.gbt_grid(GbtLoss::Squared),
                    &train.x,
                    outcome,
                    cfg.hp_budget,
                    cfg.cv_folds,
                    child_seed(seed, 5),
                )?,
            ];
            let e = stack_fit(
                &e_bases,
                &train.x,
                prop,
                cfg.stack_folds,
                child_seed(seed, 6),
            )?;
            let m = stack_fit(
                &m_bases,
                &train.x,
                outcome,
                cfg.stack_folds,
                child_seed(seed, 7),
            )?;
            (PropensityModel::Stacked(e), MeanOutcomeModel::Stacked(m))
        }
    };
    Ok(NuisancePair {
        propensity,
        mean_outcome,
        eta: cfg.eta,
        source,
    })
}

/// Randomized search: draws up to `hp_budget` grid points and keeps the one
/// with the lowest cross-validated Brier score / MSE. Earlier draws win
/// ties. A one-point grid is returned without cross-validation.
pub(crate) fn search(
    grid: &[BaseSpec],
    x: &Matrix,
    target: StackTarget<'_>,
    hp_budget: usize,
    cv_folds: usize,
    seed: u64,
) -> Result<BaseSpec> {
    if grid.is_empty() {
        bail!(Config, "empty hyper-parameter grid");
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut rng = SimRng::child(seed, 0);
    let draws = sample_grid(grid, hp_budget, &mut rng);
    let folds = match target {
        StackTarget::Classification(a) => stratified_kfold(a, cv_folds, child_seed(seed, 1))?,
        StackTarget::Regression(y) => kfold(y.len(), cv_folds, child_seed(seed, 1))?,
    };
    let mut best = (f64::INFINITY, draws[0]);
    for spec in draws {
        let pred = crate::learners::stack::oof_predictions(&spec, x, target, &folds)?;
        let loss = target.loss(&pred);
        if loss < best.0 {
            best = (loss, spec);
        }
    }
    Ok(best.1)
}

//! Treated/control overlap measured by the normalized total variation
//! between the two covariate distributions:
//!
//! ```text
//! NTV = 1/(2N) sum_i | e(x_i)/p_a - (1 - e(x_i))/(1 - p_a) |
//! ```

use alloc::vec::Vec;

use crate::cv::{complement, stratified_kfold};
use crate::dataset::Dataset;
use crate::error::{bail, Result};
use crate::learners::{platt_calibrate, BaseModel, BaseSpec, GbtLoss, GbtParams, StackTarget};
use crate::nuisance::search;
use crate::rng::{child_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NtvSource {
    Oracle,
    PluginLinear,
    PluginGbt,
}

impl NtvSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            NtvSource::Oracle => "oracle",
            NtvSource::PluginLinear => "plugin_linear",
            NtvSource::PluginGbt => "plugin_gbt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OverlapReport {
    pub ntv: f64,
    pub source: NtvSource,
    pub calibrated: bool,
    pub p_a_hat: f64,
}

/// Finite-sum NTV, clamped to `[0, 1]`.
pub fn ntv(e: &[f64], p_a: f64) -> Result<f64> {
    if !(p_a > 0.0 && p_a < 1.0) {
        bail!(
            Domain,
            "treatment prevalence must lie in (0, 1), got {}",
            p_a
        );
    }
    if e.is_empty() {
        bail!(Domain, "NTV over zero rows");
    }
    let s: f64 = e
        .iter()
        .map(|&v| (v / p_a - (1.0 - v) / (1.0 - p_a)).abs())
        .sum();
    Ok((s / (2.0 * e.len() as f64)).clamp(0.0, 1.0))
}

/// NTV from the true propensities of `data`, at prevalence `p_a`.
pub fn oracle_ntv(data: &Dataset, p_a: f64) -> Result<OverlapReport> {
    let e = &data.oracle()?.e;
    Ok(OverlapReport {
        ntv: ntv(e, p_a)?,
        source: NtvSource::Oracle,
        calibrated: false,
        p_a_hat: data.treated_rate(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PluginModel {
    Linear,
    Gbt,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PluginConfig {
    pub holdout_frac: f64,
    pub hp_budget: usize,
    pub cv_folds: usize,
    pub calibration_folds: usize,
    pub logistic_c: Vec<f64>,
    pub gbt_learning_rates: Vec<f64>,
    pub gbt_min_samples_leaf: Vec<usize>,
    pub gbt_leaves: usize,
    pub gbt_rounds: usize,
}

impl Default for PluginConfig {
    fn default() -> Self {
        PluginConfig {
            holdout_frac: 0.5,
            hp_budget: 10,
            cv_folds: 5,
            calibration_folds: 5,
            logistic_c: alloc::vec![1e-3, 1e-2, 1e-1, 1.0],
            gbt_learning_rates: alloc::vec![1e-3, 1e-2, 1e-1, 1.0],
            gbt_min_samples_leaf: alloc::vec![2, 10, 50, 100, 200],
            gbt_leaves: 31,
            gbt_rounds: 100,
        }
    }
}

impl PluginConfig {
    fn grid(&self, model: PluginModel) -> Vec<BaseSpec> {
        match model {
            PluginModel::Linear => self
                .logistic_c
                .iter()
                .map(|c| BaseSpec::Logistic { l2: 1.0 / c })
                .collect(),
            PluginModel::Gbt => {
                let mut out = Vec::new();
                for &lr in &self.gbt_learning_rates {
                    for &leaf in &self.gbt_min_samples_leaf {
                        out.push(BaseSpec::Gbt(
                            GbtParams::new(GbtLoss::Logistic, lr, self.gbt_leaves)
                                .with_rounds(self.gbt_rounds)
                                .with_min_samples_leaf(leaf),
                        ));
                    }
                }
                out
            }
        }
    }
}

/// Plug-in NTV: tunes and fits a propensity classifier on one part of the
/// rows, optionally Platt-calibrates it on its out-of-fold scores, and
/// evaluates NTV on the held-out rows at the empirical prevalence.
pub fn ntv_plugin(
    data: &Dataset,
    model: PluginModel,
    calibrate: bool,
    cfg: &PluginConfig,
    seed: u64,
) -> Result<OverlapReport> {
    data.require_both_arms("plug-in NTV")?;
    if !(cfg.holdout_frac > 0.0 && cfg.holdout_frac < 1.0) {
        bail!(
            Config,
            "holdout fraction must lie in (0, 1), got {}",
            cfg.holdout_frac
        );
    }
    let n = data.n();
    let n_hold = ((n as f64) * cfg.holdout_frac).round() as usize;
    let mut split = None;
    for attempt in 0..10u64 {
        let perm = SimRng::child(seed, attempt).permutation(n);
        let (mut hold, mut train) = (perm[..n_hold].to_vec(), perm[n_hold..].to_vec());
        hold.sort_unstable();
        train.sort_unstable();
        let (tr, ho) = (data.subset(&train), data.subset(&hold));
        if tr.has_both_arms()
            && ho.n() > 0
            && tr.n_treated() >= cfg.cv_folds
            && tr.n() - tr.n_treated() >= cfg.cv_folds
        {
            split = Some((tr, ho));
            break;
        }
    }
    let Some((train, hold)) = split else {
        bail!(
            Degenerate,
            "could not draw a split with both treatment arms in the fitting rows"
        );
    };
    let target = StackTarget::Classification(&train.treatment);
    let spec = search(
        &cfg.grid(model),
        &train.x,
        target,
        cfg.hp_budget,
        cfg.cv_folds,
        child_seed(seed, 100),
    )?;
    let fitted = BaseModel::fit(&spec, &train.x, target)?;
    let e: Vec<f64> = if calibrate {
        let folds = stratified_kfold(
            &train.treatment,
            cfg.calibration_folds,
            child_seed(seed, 101),
        )?;
        let mut oof = alloc::vec![0.0; train.n()];
        for fold in &folds {
            let rest = complement(train.n(), fold);
            let sub = train.subset(&rest);
            let m = BaseModel::fit(&spec, &sub.x, StackTarget::Classification(&sub.treatment))?;
            for &i in fold {
                oof[i] = m.decision_row(train.x.row(i));
            }
        }
        let map = platt_calibrate(&oof, &train.treatment)?;
        (0..hold.n())
            .map(|i| map.apply(fitted.decision_row(hold.x.row(i))))
            .collect()
    } else {
        fitted.predict(&hold.x)
    };
    let p_a_hat = data.treated_rate();
    let source = match model {
        PluginModel::Linear => NtvSource::PluginLinear,
        PluginModel::Gbt => NtvSource::PluginGbt,
    };
    Ok(OverlapReport {
        ntv: ntv(&e, p_a_hat)?,
        source,
        calibrated: calibrate,
        p_a_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Tertile {
    Strong,
    Medium,
    Weak,
}

impl Tertile {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tertile::Strong => "strong",
            Tertile::Medium => "medium",
            Tertile::Weak => "weak",
        }
    }
}

/// Labels values by NTV tertile: the lowest third is strong overlap, the
/// highest third weak. Cut points are the values at sorted ranks
/// `ceil(n/3)` and `ceil(2n/3)`, so ties share a bucket.
pub fn tertile_bucket(values: &[f64]) -> Result<Vec<Tertile>> {
    let n = values.len();
    if n < 3 {
        bail!(Domain, "tertiles need at least 3 values, got {}", n);
    }
    if values.iter().any(|v| v.is_nan()) {
        bail!(Domain, "NaN in overlap values");
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = sorted[n.div_ceil(3) - 1];
    let q2 = sorted[(2 * n).div_ceil(3) - 1];
    Ok(values
        .iter()
        .map(|&v| {
            if v <= q1 {
                Tertile::Strong
            } else if v <= q2 {
                Tertile::Medium
            } else {
                Tertile::Weak
            }
        })
        .collect())
}

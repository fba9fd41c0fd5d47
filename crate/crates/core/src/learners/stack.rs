//! Stacked generalization: a convex combination of base learners whose
//! weights are fitted on out-of-fold predictions.

use alloc::vec::Vec;

use super::{
    brier, gbt_fit, logistic_fit, mse, ridge_fit, GbtLoss, GbtModel, GbtParams, LogisticModel,
    LogisticOptions, RidgeModel,
};
use crate::cv::{complement, kfold, stratified_kfold};
use crate::error::{bail, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BaseSpec {
    Ridge { lambda: f64 },
    Logistic { l2: f64 },
    Gbt(GbtParams),
}

#[derive(Debug, Clone, Copy)]
pub enum StackTarget<'a> {
    Regression(&'a [f64]),
    Classification(&'a [bool]),
}

impl StackTarget<'_> {
    fn len(&self) -> usize {
        match self {
            StackTarget::Regression(y) => y.len(),
            StackTarget::Classification(a) => a.len(),
        }
    }

    fn select(&self, idx: &[usize]) -> OwnedTarget {
        match self {
            StackTarget::Regression(y) => {
                OwnedTarget::Regression(idx.iter().map(|&i| y[i]).collect())
            }
            StackTarget::Classification(a) => {
                OwnedTarget::Classification(idx.iter().map(|&i| a[i]).collect())
            }
        }
    }

    /// Squared loss on the response / probability scale (MSE or Brier).
    pub fn loss(&self, pred: &[f64]) -> f64 {
        match self {
            StackTarget::Regression(y) => mse(pred, y),
            StackTarget::Classification(a) => brier(pred, a),
        }
    }

    fn numeric(&self) -> Vec<f64> {
        match self {
            StackTarget::Regression(y) => y.to_vec(),
            StackTarget::Classification(a) => super::labels_to_f64(a),
        }
    }
}

enum OwnedTarget {
    Regression(Vec<f64>),
    Classification(Vec<bool>),
}

impl OwnedTarget {
    fn borrow(&self) -> StackTarget<'_> {
        match self {
            OwnedTarget::Regression(y) => StackTarget::Regression(y),
            OwnedTarget::Classification(a) => StackTarget::Classification(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BaseModel {
    Ridge(RidgeModel),
    Logistic(LogisticModel),
    Gbt(GbtModel),
}

impl BaseModel {
    /// Fits `spec` on `(x, target)`. Boosting uses the loss matching the
    /// target kind, whatever the spec says.
    pub fn fit(spec: &BaseSpec, x: &Matrix, target: StackTarget<'_>) -> Result<BaseModel> {
        match (spec, target) {
            (BaseSpec::Ridge { lambda }, StackTarget::Regression(y)) => {
                Ok(BaseModel::Ridge(ridge_fit(x, y, *lambda)?))
            }
            (BaseSpec::Logistic { l2 }, StackTarget::Classification(a)) => Ok(BaseModel::Logistic(
                logistic_fit(x, a, *l2, LogisticOptions::default())?,
            )),
            (BaseSpec::Gbt(p), t) => {
                let loss = match t {
                    StackTarget::Regression(_) => GbtLoss::Squared,
                    StackTarget::Classification(_) => GbtLoss::Logistic,
                };
                Ok(BaseModel::Gbt(gbt_fit(
                    x,
                    &t.numeric(),
                    GbtParams { loss, ..*p },
                )?))
            }
            (BaseSpec::Ridge { .. }, StackTarget::Classification(_)) => {
                bail!(Config, "ridge base cannot fit a classification target")
            }
            (BaseSpec::Logistic { .. }, StackTarget::Regression(_)) => {
                bail!(Config, "logistic base cannot fit a regression target")
            }
        }
    }

    /// Regression response or class-1 probability.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            BaseModel::Ridge(m) => m.predict_row(x),
            BaseModel::Logistic(m) => m.predict_proba_row(x),
            BaseModel::Gbt(m) => m.predict_row(x),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    /// Unsquashed score (log-odds for classifiers).
    pub fn decision_row(&self, x: &[f64]) -> f64 {
        match self {
            BaseModel::Ridge(m) => m.predict_row(x),
            BaseModel::Logistic(m) => m.decision_row(x),
            BaseModel::Gbt(m) => m.decision_row(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StackedModel {
    pub base_models: Vec<BaseModel>,
    /// Non-negative, sums to one.
    pub meta_weights: Vec<f64>,
    pub oof_folds: usize,
    /// Out-of-fold loss of each base model and of the combination.
    pub base_oof_loss: Vec<f64>,
    pub oof_loss: f64,
}

impl StackedModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.base_models
            .iter()
            .zip(&self.meta_weights)
            .map(|(m, w)| w * m.predict_row(x))
            .sum()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Out-of-fold predictions of one base spec.
pub(crate) fn oof_predictions(
    spec: &BaseSpec,
    x: &Matrix,
    target: StackTarget<'_>,
    folds: &[Vec<usize>],
) -> Result<Vec<f64>> {
    let n = x.rows();
    let mut out = alloc::vec![0.0; n];
    for fold in folds {
        let train = complement(n, fold);
        let model = BaseModel::fit(spec, &x.select_rows(&train), target.select(&train).borrow())?;
        for &i in fold {
            out[i] = model.predict_row(x.row(i));
        }
    }
    Ok(out)
}

pub(crate) fn folds_for(target: StackTarget<'_>, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    match target {
        StackTarget::Regression(y) => kfold(y.len(), k, seed),
        StackTarget::Classification(a) => stratified_kfold(a, k, seed),
    }
}

/// Fits the base learners, then the simplex weights on their out-of-fold
/// predictions, then refits every base on all rows.
pub fn stack_fit(
    bases: &[BaseSpec],
    x: &Matrix,
    target: StackTarget<'_>,
    oof_folds: usize,
    seed: u64,
) -> Result<StackedModel> {
    if bases.is_empty() {
        bail!(Config, "stacking needs at least one base model");
    }
    if oof_folds < 2 {
        bail!(Config, "stacking needs at least 2 folds, got {}", oof_folds);
    }
    if target.len() != x.rows() {
        bail!(
            Shape,
            "x has {} rows but target has {}",
            x.rows(),
            target.len()
        );
    }
    if x.rows() < oof_folds {
        bail!(
            Config,
            "{} samples is fewer than {} folds",
            x.rows(),
            oof_folds
        );
    }
    let folds = folds_for(target, oof_folds, seed)?;
    let preds: Vec<Vec<f64>> = bases
        .iter()
        .map(|spec| oof_predictions(spec, x, target, &folds))
        .collect::<Result<_>>()?;
    let t = target.numeric();
    let meta_weights = simplex_least_squares(&preds, &t);
    let combined: Vec<f64> = (0..x.rows())
        .map(|i| preds.iter().zip(&meta_weights).map(|(p, w)| w * p[i]).sum())
        .collect();
    let base_oof_loss = preds.iter().map(|p| target.loss(p)).collect();
    let oof_loss = target.loss(&combined);
    let base_models = bases
        .iter()
        .map(|s| BaseModel::fit(s, x, target))
        .collect::<Result<_>>()?;
    Ok(StackedModel {
        base_models,
        meta_weights,
        oof_folds,
        base_oof_loss,
        oof_loss,
    })
}

/// Minimises `|P w - t|^2` over the probability simplex, where column `k`
/// of `P` is `columns[k]`. Projected gradient descent started from the best
/// single column, so the result is never worse than any vertex.
pub fn simplex_least_squares(columns: &[Vec<f64>], t: &[f64]) -> Vec<f64> {
    let k = columns.len();
    if k == 1 {
        return alloc::vec![1.0];
    }
    let n = t.len() as f64;
    let mut q = alloc::vec![0.0; k * k];
    let mut c = alloc::vec![0.0; k];
    for a in 0..k {
        c[a] = columns[a].iter().zip(t).map(|(p, y)| p * y).sum::<f64>() / n;
        for b in a..k {
            let v = columns[a]
                .iter()
                .zip(&columns[b])
                .map(|(p, r)| p * r)
                .sum::<f64>()
                / n;
            q[a * k + b] = v;
            q[b * k + a] = v;
        }
    }
    let tt = t.iter().map(|y| y * y).sum::<f64>() / n;
    // f(w) = w'Qw - 2c'w + tt
    let objective = |w: &[f64]| -> f64 {
        let mut s = tt;
        for a in 0..k {
            s -= 2.0 * c[a] * w[a];
            for b in 0..k {
                s += w[a] * q[a * k + b] * w[b];
            }
        }
        s
    };
    let mut w = alloc::vec![0.0; k];
    let best_vertex = (0..k)
        .min_by(|&a, &b| (q[a * k + a] - 2.0 * c[a]).total_cmp(&(q[b * k + b] - 2.0 * c[b])))
        .unwrap();
    w[best_vertex] = 1.0;
    let trace: f64 = (0..k).map(|a| q[a * k + a]).sum();
    if trace <= 0.0 {
        return w;
    }
    let step = 1.0 / (2.0 * trace);
    let mut f = objective(&w);
    let mut grad = alloc::vec![0.0; k];
    for _ in 0..20_000 {
        for a in 0..k {
            grad[a] = 2.0 * ((0..k).map(|b| q[a * k + b] * w[b]).sum::<f64>() - c[a]);
        }
        let cand: Vec<f64> = w.iter().zip(&grad).map(|(wi, g)| wi - step * g).collect();
        let cand = project_simplex(&cand);
        let f_new = objective(&cand);
        let moved = cand
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if f_new > f {
            break;
        }
        w = cand;
        f = f_new;
        if moved < 1e-15 {
            break;
        }
    }
    w
}

/// Euclidean projection onto `{w >= 0, sum w = 1}`.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use alloc::vec;

    #[test]
    fn projection_lands_on_simplex() {
        for v in [
            vec![0.2, 0.3],
            vec![5.0, -1.0, 0.5],
            vec![0.1, 0.1, 0.1, 0.1],
        ] {
            let p = project_simplex(&v);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn single_base_gets_full_weight() {
        let mut rng = SimRng::new(2);
        let n = 60;
        let x = Matrix::new(n, 1, (0..n).map(|_| rng.normal()).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x.get(i, 0) + rng.normal()).collect();
        let s = stack_fit(
            &[BaseSpec::Ridge { lambda: 1.0 }],
            &x,
            StackTarget::Regression(&y),
            5,
            1,
        )
        .unwrap();
        assert_eq!(s.meta_weights, vec![1.0]);
        let direct = ridge_fit(&x, &y, 1.0).unwrap();
        assert_eq!(s.predict(&x), direct.predict(&x));
    }

    #[test]
    fn identical_bases_reproduce_base() {
        let mut rng = SimRng::new(3);
        let n = 60;
        let x = Matrix::new(n, 1, (0..n).map(|_| rng.normal()).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|i| x.get(i, 0) + 0.3 * rng.normal()).collect();
        let spec = BaseSpec::Ridge { lambda: 0.5 };
        let s = stack_fit(&[spec, spec], &x, StackTarget::Regression(&y), 4, 1).unwrap();
        assert!((s.meta_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let direct = ridge_fit(&x, &y, 0.5).unwrap().predict(&x);
        for (a, b) in s.predict(&x).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_samples_for_folds() {
        let x = Matrix::zeros(3, 1);
        let err = stack_fit(
            &[BaseSpec::Ridge { lambda: 1.0 }],
            &x,
            StackTarget::Regression(&[1.0, 2.0, 3.0]),
            5,
            0,
        )
        .unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn classification_stack_is_probability() {
        let mut rng = SimRng::new(6);
        let n = 300;
        let x = Matrix::new(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        let a: Vec<bool> = (0..n)
            .map(|i| rng.bernoulli(super::super::sigmoid(1.5 * x.get(i, 0))))
            .collect();
        let bases = [
            BaseSpec::Logistic { l2: 1.0 },
            BaseSpec::Gbt(GbtParams::new(GbtLoss::Logistic, 0.1, 10).with_rounds(20)),
        ];
        let s = stack_fit(&bases, &x, StackTarget::Classification(&a), 5, 2).unwrap();
        assert!(s.predict(&x).iter().all(|&p| (0.0..=1.0).contains(&p)));
        let worst = s.base_oof_loss.iter().copied().fold(f64::MIN, f64::max);
        let best = s.base_oof_loss.iter().copied().fold(f64::MAX, f64::min);
        assert!(s.oof_loss <= best + 1e-15 && s.oof_loss <= worst);
    }
}

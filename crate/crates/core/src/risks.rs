//! Causal risks of an outcome model, as finite sums over evaluation rows.
//!
//! | risk           | per-row loss                                   |
//! |----------------|------------------------------------------------|
//! | `tau_risk`     | `(tau - tau_f)^2` (needs the true effect)      |
//! | `mu_risk`      | `(y - f(x, a))^2`                              |
//! | `mu_risk_ipw`  | `w (y - f(x, a))^2`, `w = a/e + (1-a)/(1-e)`   |
//! | `tau_risk_ipw` | `(y (a/e - (1-a)/(1-e)) - tau_f)^2`            |
//! | `u_risk`       | `((y - m)/(a - e) - tau_f)^2`                  |
//! | `r_risk`       | `((y - m) - (a - e) tau_f)^2`                  |

use alloc::string::String;
use alloc::vec::Vec;

use crate::candidates::ResponsePredictions;
use crate::dataset::Dataset;
use crate::error::{bail, Result};
use crate::nuisance::{NuisanceSource, NuisanceValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RiskKind {
    Tau,
    Mu,
    MuIpw,
    TauIpw,
    U,
    R,
}

impl RiskKind {
    pub const ALL: [RiskKind; 6] = [
        RiskKind::Tau,
        RiskKind::Mu,
        RiskKind::MuIpw,
        RiskKind::TauIpw,
        RiskKind::U,
        RiskKind::R,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RiskKind::Tau => "tau_risk",
            RiskKind::Mu => "mu_risk",
            RiskKind::MuIpw => "mu_risk_ipw",
            RiskKind::TauIpw => "tau_risk_ipw",
            RiskKind::U => "u_risk",
            RiskKind::R => "r_risk",
        }
    }

    pub fn parse(s: &str) -> Option<RiskKind> {
        RiskKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Whether the risk reads `(e, m)`.
    pub fn needs_nuisances(&self) -> bool {
        !matches!(self, RiskKind::Tau | RiskKind::Mu)
    }
}

/// Which nuisances a risk value was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NuisanceMode {
    /// The risk uses no nuisance.
    None,
    Oracle,
    Linear,
    Stacked,
}

impl NuisanceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NuisanceMode::None => "none",
            NuisanceMode::Oracle => "oracle",
            NuisanceMode::Linear => "linear",
            NuisanceMode::Stacked => "stacked",
        }
    }

    pub fn parse(s: &str) -> Option<NuisanceMode> {
        [
            NuisanceMode::None,
            NuisanceMode::Oracle,
            NuisanceMode::Linear,
            NuisanceMode::Stacked,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
    }
}

impl From<NuisanceSource> for NuisanceMode {
    fn from(s: NuisanceSource) -> Self {
        match s {
            NuisanceSource::Oracle => NuisanceMode::Oracle,
            NuisanceSource::Linear => NuisanceMode::Linear,
            NuisanceSource::Stacked => NuisanceMode::Stacked,
        }
    }
}

fn check_len(pred: &ResponsePredictions, eval: &Dataset) -> Result<()> {
    if pred.len() != eval.n() {
        bail!(
            Shape,
            "{} predictions for {} evaluation rows",
            pred.len(),
            eval.n()
        );
    }
    if eval.n() == 0 {
        bail!(Domain, "risk over zero rows");
    }
    Ok(())
}

fn check_nuisances(nuis: &NuisanceValues, eval: &Dataset) -> Result<()> {
    if nuis.e.len() != eval.n() || nuis.m.len() != eval.n() {
        bail!(
            Shape,
            "nuisances cover {} rows, evaluation set has {}",
            nuis.e.len(),
            eval.n()
        );
    }
    Ok(())
}

fn mean_of(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    (0..n).map(f).sum::<f64>() / n as f64
}

#[inline]
fn sq(v: f64) -> f64 {
    v * v
}

#[inline]
fn arm(a: bool) -> f64 {
    if a {
        1.0
    } else {
        0.0
    }
}

pub fn tau_risk(pred: &ResponsePredictions, eval: &Dataset) -> Result<f64> {
    check_len(pred, eval)?;
    let cate = &eval.oracle()?.cate;
    Ok(mean_of(eval.n(), |i| {
        sq(cate[i] - (pred.mu1[i] - pred.mu0[i]))
    }))
}

pub fn mu_risk(pred: &ResponsePredictions, eval: &Dataset) -> Result<f64> {
    check_len(pred, eval)?;
    Ok(mean_of(eval.n(), |i| {
        let f = if eval.treatment[i] {
            pred.mu1[i]
        } else {
            pred.mu0[i]
        };
        sq(eval.y[i] - f)
    }))
}

pub fn mu_risk_ipw(
    pred: &ResponsePredictions,
    eval: &Dataset,
    nuis: &NuisanceValues,
) -> Result<f64> {
    check_len(pred, eval)?;
    check_nuisances(nuis, eval)?;
    Ok(mean_of(eval.n(), |i| {
        let (w, f) = if eval.treatment[i] {
            (1.0 / nuis.e[i], pred.mu1[i])
        } else {
            (1.0 / (1.0 - nuis.e[i]), pred.mu0[i])
        };
        w * sq(eval.y[i] - f)
    }))
}

pub fn tau_risk_ipw(
    pred: &ResponsePredictions,
    eval: &Dataset,
    nuis: &NuisanceValues,
) -> Result<f64> {
    check_len(pred, eval)?;
    check_nuisances(nuis, eval)?;
    Ok(mean_of(eval.n(), |i| {
        let a = arm(eval.treatment[i]);
        let e = nuis.e[i];
        let pseudo = eval.y[i] * (a / e - (1.0 - a) / (1.0 - e));
        sq(pseudo - (pred.mu1[i] - pred.mu0[i]))
    }))
}

pub fn u_risk(pred: &ResponsePredictions, eval: &Dataset, nuis: &NuisanceValues) -> Result<f64> {
    check_len(pred, eval)?;
    check_nuisances(nuis, eval)?;
    Ok(mean_of(eval.n(), |i| {
        let a = arm(eval.treatment[i]);
        sq((eval.y[i] - nuis.m[i]) / (a - nuis.e[i]) - (pred.mu1[i] - pred.mu0[i]))
    }))
}

pub fn r_risk(pred: &ResponsePredictions, eval: &Dataset, nuis: &NuisanceValues) -> Result<f64> {
    check_len(pred, eval)?;
    check_nuisances(nuis, eval)?;
    Ok(mean_of(eval.n(), |i| {
        let a = arm(eval.treatment[i]);
        sq((eval.y[i] - nuis.m[i]) - (a - nuis.e[i]) * (pred.mu1[i] - pred.mu0[i]))
    }))
}

/// Dispatches on `kind`. Nuisance-based risks require `nuis`.
pub fn risk(
    kind: RiskKind,
    pred: &ResponsePredictions,
    eval: &Dataset,
    nuis: Option<&NuisanceValues>,
) -> Result<f64> {
    let need = || match nuis {
        Some(v) => Ok(v),
        None => bail!(Config, "{} needs nuisance estimates", kind.as_str()),
    };
    let v = match kind {
        RiskKind::Tau => tau_risk(pred, eval)?,
        RiskKind::Mu => mu_risk(pred, eval)?,
        RiskKind::MuIpw => mu_risk_ipw(pred, eval, need()?)?,
        RiskKind::TauIpw => tau_risk_ipw(pred, eval, need()?)?,
        RiskKind::U => u_risk(pred, eval, need()?)?,
        RiskKind::R => r_risk(pred, eval, need()?)?,
    };
    if !v.is_finite() {
        bail!(Numerical, "{} is not finite", kind.as_str());
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskEntry {
    pub candidate_id: String,
    pub risk: RiskKind,
    pub mode: NuisanceMode,
    pub value: f64,
}

/// Risk values of a family on one evaluation set, one entry per
/// `(candidate, risk, mode)`.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskTable {
    pub eval_set_id: String,
    pub candidate_ids: Vec<String>,
    pub entries: Vec<RiskEntry>,
}

impl RiskTable {
    pub fn new(eval_set_id: &str, candidate_ids: Vec<String>) -> Self {
        RiskTable {
            eval_set_id: String::from(eval_set_id),
            candidate_ids,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, candidate_id: &str, risk: RiskKind, mode: NuisanceMode, value: f64) {
        self.entries.push(RiskEntry {
            candidate_id: String::from(candidate_id),
            risk,
            mode,
            value,
        });
    }

    /// Distinct `(risk, mode)` columns in first-appearance order.
    pub fn columns(&self) -> Vec<(RiskKind, NuisanceMode)> {
        let mut out: Vec<(RiskKind, NuisanceMode)> = Vec::new();
        for e in &self.entries {
            if !out.contains(&(e.risk, e.mode)) {
                out.push((e.risk, e.mode));
            }
        }
        out
    }

    /// Column values aligned with `candidate_ids`; `None` when any
    /// candidate lacks the entry.
    pub fn column(&self, risk: RiskKind, mode: NuisanceMode) -> Option<Vec<f64>> {
        self.candidate_ids
            .iter()
            .map(|id| {
                self.entries
                    .iter()
                    .find(|e| e.risk == risk && e.mode == mode && &e.candidate_id == id)
                    .map(|e| e.value)
            })
            .collect()
    }
}

/// Bayes residual variances under constant noise: `sigma_b_sq[a]` is the
/// noise variance in arm `a`, `sigma_b_tilde_sq[a]` weights it by the arm's
/// share of the population.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BayesResiduals {
    pub sigma_b_sq: [f64; 2],
    pub sigma_b_tilde_sq: [f64; 2],
}

/// Requires a simulated dataset (known noise level and propensity).
pub fn bayes_residuals(eval: &Dataset) -> Result<BayesResiduals> {
    let (Some(sigma), Some(oracle)) = (eval.sigma_noise, eval.oracle.as_ref()) else {
        bail!(
            Unsupported,
            "Bayes residuals need simulated data with a known noise level"
        );
    };
    let s2 = sigma * sigma;
    let mean_e = oracle.e.iter().sum::<f64>() / oracle.e.len() as f64;
    Ok(BayesResiduals {
        sigma_b_sq: [s2, s2],
        sigma_b_tilde_sq: [s2 * (1.0 - mean_e), s2 * mean_e],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauRiskBoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `tau_risk <= 2 mu_risk_ipw(true e) - 2 (sigma_b(0) + sigma_b(1))`, with
/// the right side relaxed by `rel_slack * |rhs|`.
pub fn check_tau_risk_bound(
    pred: &ResponsePredictions,
    eval: &Dataset,
    residuals: &BayesResiduals,
    rel_slack: f64,
) -> Result<TauRiskBoundCheck> {
    let nuis = crate::nuisance::oracle_nuisances(eval)?.evaluate(eval)?;
    let lhs = tau_risk(pred, eval)?;
    let rhs = 2.0 * mu_risk_ipw(pred, eval, &nuis)?
        - 2.0 * (residuals.sigma_b_sq[0] + residuals.sigma_b_sq[1]);
    Ok(TauRiskBoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + rel_slack * rhs.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDecompositionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// Compares the semi-oracle R-risk with
/// `mean(e (1 - e) (tau - tau_f)^2) + sigma_tilde(0) + sigma_tilde(1)`.
pub fn check_r_decomposition(
    pred: &ResponsePredictions,
    eval: &Dataset,
    residuals: &BayesResiduals,
) -> Result<RDecompositionCheck> {
    let nuis = crate::nuisance::oracle_nuisances(eval)?.evaluate(eval)?;
    let lhs = r_risk(pred, eval, &nuis)?;
    let o = eval.oracle()?;
    let weighted = mean_of(eval.n(), |i| {
        o.e[i] * (1.0 - o.e[i]) * sq(o.cate[i] - (pred.mu1[i] - pred.mu0[i]))
    });
    let rhs = weighted + residuals.sigma_b_tilde_sq[0] + residuals.sigma_b_tilde_sq[1];
    Ok(RDecompositionCheck {
        lhs,
        rhs,
        rel_err: (lhs - rhs).abs() / rhs.max(1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nuisance::oracle_nuisances;
    use alloc::vec;

    fn tiny(y: Vec<f64>, a: Vec<bool>) -> Dataset {
        let n = y.len();
        Dataset::new(Matrix::zeros(n, 1), a, y, None, None).unwrap()
    }

    #[test]
    fn mu_risk_examples() {
        let d = tiny(vec![1.0, -1.0], vec![true, false]);
        let zero = ResponsePredictions::new(vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert_eq!(mu_risk(&zero, &d).unwrap(), 1.0);
        let memo = ResponsePredictions::new(vec![5.0, -1.0], vec![1.0, 7.0]).unwrap();
        assert_eq!(mu_risk(&memo, &d).unwrap(), 0.0);
    }

    #[test]
    fn half_propensity_doubles_mu_risk() {
        let d = tiny(vec![1.0, 2.5, -0.3], vec![true, false, true]);
        let p = ResponsePredictions::new(vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]).unwrap();
        let nuis = NuisanceValues {
            e: vec![0.5; 3],
            m: vec![0.0; 3],
        };
        assert_eq!(
            mu_risk_ipw(&p, &d, &nuis).unwrap(),
            2.0 * mu_risk(&p, &d).unwrap()
        );
    }

    #[test]
    fn tau_ipw_examples() {
        let d = tiny(vec![2.0], vec![true]);
        let p = ResponsePredictions::new(vec![0.0], vec![4.0]).unwrap();
        let nuis = NuisanceValues {
            e: vec![0.5],
            m: vec![0.0],
        };
        assert_eq!(tau_risk_ipw(&p, &d, &nuis).unwrap(), 0.0);
    }

    #[test]
    fn u_and_r_examples() {
        let d = tiny(vec![1.0, 2.0], vec![true, false]);
        let p = ResponsePredictions::new(vec![0.0, 1.0], vec![3.0, 2.0]).unwrap();
        let nuis = NuisanceValues {
            e: vec![0.4, 0.7],
            m: d.y.clone(),
        };
        let want = (9.0 + 1.0) / 2.0;
        assert_eq!(u_risk(&p, &d, &nuis).unwrap(), want);
        // y - m = (a - e) tau_f on the single row
        let d1 = tiny(vec![1.0 + 0.6 * 3.0], vec![true]);
        let p1 = ResponsePredictions::new(vec![0.0], vec![3.0]).unwrap();
        let n1 = NuisanceValues {
            e: vec![0.4],
            m: vec![1.0],
        };
        assert!(u_risk(&p1, &d1, &n1).unwrap() < 1e-24);
        assert!(r_risk(&p1, &d1, &n1).unwrap() < 1e-24);
    }

    #[test]
    fn missing_oracle_is_data_error() {
        let d = tiny(vec![1.0], vec![true]);
        let p = ResponsePredictions::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(tau_risk(&p, &d).unwrap_err().kind(), "data");
        assert_eq!(bayes_residuals(&d).unwrap_err().kind(), "unsupported");
        assert_eq!(
            risk(RiskKind::R, &p, &d, None).unwrap_err().kind(),
            "config"
        );
    }

    #[test]
    fn offset_effect_has_unit_tau_risk() {
        let d = crate::datagen::Caussim::new(crate::datagen::SimConfig::new(3, 1.0, 500))
            .unwrap()
            .dataset()
            .unwrap();
        let mut p = ResponsePredictions::oracle(&d).unwrap();
        assert_eq!(tau_risk(&p, &d).unwrap(), 0.0);
        p.mu1.iter_mut().for_each(|v| *v += 1.0);
        assert!((tau_risk(&p, &d).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residuals_sum_to_noise_variance() {
        let d = crate::datagen::Caussim::new(crate::datagen::SimConfig::new(8, 2.2, 800))
            .unwrap()
            .dataset()
            .unwrap();
        let r = bayes_residuals(&d).unwrap();
        let s2 = d.sigma_noise.unwrap() * d.sigma_noise.unwrap();
        assert!((r.sigma_b_tilde_sq[0] + r.sigma_b_tilde_sq[1] - s2).abs() <= 1e-15 * s2.max(1.0));
        let nuis = oracle_nuisances(&d).unwrap().evaluate(&d).unwrap();
        assert_eq!(nuis.e.len(), d.n());
    }

    #[test]
    fn table_columns() {
        let mut t = RiskTable::new("s", vec!["b".into(), "a".into()]);
        t.push("a", RiskKind::Mu, NuisanceMode::None, 1.0);
        t.push("b", RiskKind::Mu, NuisanceMode::None, 2.0);
        t.push("b", RiskKind::R, NuisanceMode::Oracle, 3.0);
        assert_eq!(
            t.columns(),
            vec![
                (RiskKind::Mu, NuisanceMode::None),
                (RiskKind::R, NuisanceMode::Oracle)
            ]
        );
        assert_eq!(
            t.column(RiskKind::Mu, NuisanceMode::None),
            Some(vec![2.0, 1.0])
        );
        assert_eq!(t.column(RiskKind::R, NuisanceMode::Oracle), None);
    }
}

//! Model selection with causal risks, and agreement of each risk with the
//! oracle `tau_risk` ranking.
//!
//! One selection run splits the data, fits every candidate (and the
//! nuisances) on the training part, evaluates all risks on the test part and
//! picks the minimiser of each risk column. With the separate procedure the
//! nuisances get their own disjoint split.

use alloc::string::String;
use alloc::vec::Vec;

use crate::candidates::{fit_candidate, CandidateFamily, OutcomeModel, ResponsePredictions};
use crate::dataset::Dataset;
use crate::error::{bail, Result};
use crate::nuisance::{
    fit_nuisances, oracle_nuisances, NuisanceConfig, NuisanceSource, NuisanceValues,
};
use crate::risks::{risk, NuisanceMode, RiskKind, RiskTable};
use crate::rng::{child_seed, SimRng};

const MAX_SPLIT_RETRIES: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Procedure {
    /// Nuisances and candidates share the training set.
    Shared,
    /// Nuisances are fitted on a disjoint nuisance set.
    Separate,
}

impl Procedure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Procedure::Shared => "shared",
            Procedure::Separate => "separate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitFractions {
    pub train: f64,
    /// Zero for the shared procedure.
    pub nuisance: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn default_for(procedure: Procedure) -> Self {
        match procedure {
            Procedure::Shared => SplitFractions {
                train: 0.5,
                nuisance: 0.0,
                test: 0.5,
            },
            Procedure::Separate => SplitFractions {
                train: 0.5,
                nuisance: 0.25,
                test: 0.25,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.nuisance, self.test];
        if parts.iter().any(|f| !(*f >= 0.0 && f.is_finite()))
            || !(self.train > 0.0 && self.test > 0.0)
        {
            bail!(
                Config,
                "split fractions must be >= 0 with positive train and test parts"
            );
        }
        if ((self.train + self.nuisance + self.test) - 1.0).abs() > 1e-9 {
            bail!(Config, "split fractions must sum to 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SelectionConfig {
    pub procedure: Procedure,
    /// Defaults per procedure when absent.
    pub split: Option<SplitFractions>,
    /// Fitted nuisance variants. Semi-oracle columns are added on their own
    /// whenever the data carries ground truth.
    pub nuisance_sources: Vec<NuisanceSource>,
    pub nuisance: NuisanceConfig,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            procedure: Procedure::Shared,
            split: None,
            nuisance_sources: alloc::vec![NuisanceSource::Stacked],
            nuisance: NuisanceConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Selected {
    pub risk: RiskKind,
    pub mode: NuisanceMode,
    pub candidate_id: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionRun {
    pub procedure: Procedure,
    pub split: SplitFractions,
    pub risk_table: RiskTable,
    pub selected: Vec<Selected>,
    pub seed: u64,
    pub n_train: usize,
    pub n_nuisance: usize,
    pub n_test: usize,
}

impl SelectionRun {
    pub fn selected_for(&self, risk: RiskKind, mode: NuisanceMode) -> Option<&str> {
        self.selected
            .iter()
            .find(|s| s.risk == risk && s.mode == mode)
            .map(|s| s.candidate_id.as_str())
    }
}

struct Partition {
    train: Dataset,
    nuisance: Option<Dataset>,
    test: Dataset,
}

fn draw_partition(
    data: &Dataset,
    split: &SplitFractions,
    with_nuisance: bool,
    seed: u64,
) -> Result<Partition> {
    let n = data.n();
    let n_train = ((n as f64) * split.train).round() as usize;
    let n_nuis = if with_nuisance {
        ((n as f64) * split.nuisance).round() as usize
    } else {
        0
    };
    if n_train < 2 || n_train + n_nuis >= n || (with_nuisance && n_nuis < 2) {
        bail!(Domain, "{} rows are too few for split {:?}", n, split);
    }
    for attempt in 0..MAX_SPLIT_RETRIES {
        let perm = SimRng::child(seed, attempt).permutation(n);
        let sorted = |r: core::ops::Range<usize>| {
            let mut v = perm[r].to_vec();
            v.sort_unstable();
            v
        };
        let (tr, nu, te) = (
            sorted(0..n_train),
            sorted(n_train..n_train + n_nuis),
            sorted(n_train + n_nuis..n),
        );
        let train = data.subset(&tr);
        let nuisance = with_nuisance.then(|| data.subset(&nu));
        if train.has_both_arms() && nuisance.as_ref().is_none_or(|d| d.has_both_arms()) {
            return Ok(Partition {
                train,
                nuisance,
                test: data.subset(&te),
            });
        }
    }
    bail!(
        Degenerate,
        "no split with both treatment arms in every fitted part after {} draws",
        MAX_SPLIT_RETRIES
    )
}

/// Index of the smallest value; ties go to the lexicographically smallest id.
pub fn argmin_by_id(values: &[f64], ids: &[String]) -> Option<usize> {
    (0..values.len()).min_by(|&a, &b| {
        values[a]
            .total_cmp(&values[b])
            .then_with(|| ids[a].cmp(&ids[b]))
    })
}

struct Detailed {
    run: SelectionRun,
    models: Vec<OutcomeModel>,
    test: Dataset,
}

fn select_detailed(
    data: &Dataset,
    family: &CandidateFamily,
    cfg: &SelectionConfig,
) -> Result<Detailed> {
    if family.is_empty() {
        bail!(Config, "empty candidate family");
    }
    let split = cfg
        .split
        .unwrap_or_else(|| SplitFractions::default_for(cfg.procedure));
    split.validate()?;
    let has_oracle = data.oracle.is_some();
    let mut fitted_sources: Vec<NuisanceSource> = Vec::new();
    for &s in &cfg.nuisance_sources {
        if s != NuisanceSource::Oracle && !fitted_sources.contains(&s) {
            fitted_sources.push(s);
        }
    }
    let separate = cfg.procedure == Procedure::Separate && !fitted_sources.is_empty();
    if cfg.procedure == Procedure::Separate && split.nuisance <= 0.0 {
        bail!(
            Config,
            "the separate procedure needs a positive nuisance fraction"
        );
    }
    // Without a separate nuisance set the nuisance part folds into test.
    let effective = if !separate {
        SplitFractions {
            train: split.train,
            nuisance: 0.0,
            test: split.test + split.nuisance,
        }
    } else {
        split
    };
    let part = draw_partition(data, &effective, separate, child_seed(cfg.seed, 0))?;

    let mut nuisances: Vec<(NuisanceMode, NuisanceValues)> = Vec::new();
    if has_oracle {
        nuisances.push((
            NuisanceMode::Oracle,
            oracle_nuisances(&part.test)?.evaluate(&part.test)?,
        ));
    }
    let nuisance_rows = part.nuisance.as_ref().unwrap_or(&part.train);
    for (k, &source) in fitted_sources.iter().enumerate() {
        let pair = fit_nuisances(
            nuisance_rows,
            source,
            &cfg.nuisance,
            child_seed(cfg.seed, 1 + k as u64),
        )?;
        nuisances.push((source.into(), pair.evaluate(&part.test)?));
    }

    let ids = family.ids();
    let mut table = RiskTable::new(cfg.procedure.as_str(), ids.clone());
    let mut models = Vec::with_capacity(family.len());
    for spec in &family.members {
        let model = fit_candidate(spec, &part.train)?;
        let pred: ResponsePredictions = model.predict_responses(&part.test.x)?;
        if has_oracle {
            table.push(
                &spec.id,
                RiskKind::Tau,
                NuisanceMode::None,
                risk(RiskKind::Tau, &pred, &part.test, None)?,
            );
        }
        table.push(
            &spec.id,
            RiskKind::Mu,
            NuisanceMode::None,
            risk(RiskKind::Mu, &pred, &part.test, None)?,
        );
        for (mode, values) in &nuisances {
            for kind in [RiskKind::MuIpw, RiskKind::TauIpw, RiskKind::U, RiskKind::R] {
                table.push(
                    &spec.id,
                    kind,
                    *mode,
                    risk(kind, &pred, &part.test, Some(values))?,
                );
            }
        }
        models.push(model);
    }

    let selected = table
        .columns()
        .into_iter()
        .map(|(risk, mode)| {
            let col = table
                .column(risk, mode)
                .expect("every candidate has every column");
            let best = argmin_by_id(&col, &ids).expect("non-empty family");
            Selected {
                risk,
                mode,
                candidate_id: ids[best].clone(),
            }
        })
        .collect();
    let run = SelectionRun {
        procedure: cfg.procedure,
        split: effective,
        risk_table: table,
        selected,
        seed: cfg.seed,
        n_train: part.train.n(),
        n_nuisance: part.nuisance.as_ref().map_or(0, |d| d.n()),
        n_test: part.test.n(),
    };
    Ok(Detailed {
        run,
        models,
        test: part.test,
    })
}

/// Runs one selection procedure on `data`.
pub fn run_selection(
    data: &Dataset,
    family: &CandidateFamily,
    cfg: &SelectionConfig,
) -> Result<SelectionRun> {
    select_detailed(data, family, cfg).map(|d| d.run)
}

/// Kendall's tau-a: `(concordant - discordant) / (n (n - 1) / 2)`, with
/// tied pairs counted in neither. O(n log n).
pub fn kendall(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        bail!(Domain, "rankings have lengths {} and {}", a.len(), b.len());
    }
    let n = a.len();
    if n < 2 {
        bail!(Domain, "Kendall's tau needs at least 2 items, got {}", n);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        bail!(Domain, "NaN in ranking");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let pairs = |t: u64| t * (t.saturating_sub(1)) / 2;
    let (mut tied_a, mut tied_both) = (0u64, 0u64);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && a[idx[j]] == a[idx[i]] {
            j += 1;
        }
        tied_a += pairs((j - i) as u64);
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && b[idx[l]] == b[idx[k]] {
                l += 1;
            }
            tied_both += pairs((l - k) as u64);
            k = l;
        }
        i = j;
    }

    let mut seq: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut buf = alloc::vec![0.0; n];
    let swaps = merge_count(&mut seq, &mut buf);

    let mut tied_b = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && seq[j] == seq[i] {
            j += 1;
        }
        tied_b += pairs((j - i) as u64);
        i = j;
    }
    let total = pairs(n as u64);
    let diff =
        total as i128 - tied_a as i128 - tied_b as i128 + tied_both as i128 - 2 * swaps as i128;
    Ok(diff as f64 / total as f64)
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count =
        merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgreementRow {
    pub risk: RiskKind,
    pub mode: NuisanceMode,
    pub kendall: f64,
    /// `kendall` minus its mean over every row of the report.
    pub relative_kendall: f64,
    pub excess_tau_risk: f64,
    pub selected: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgreementReport {
    pub rows: Vec<AgreementRow>,
}

impl AgreementReport {
    pub fn get(&self, risk: RiskKind, mode: NuisanceMode) -> Option<&AgreementRow> {
        self.rows.iter().find(|r| r.risk == risk && r.mode == mode)
    }
}

/// Compares every non-oracle risk column with the `tau_risk` column.
/// Kendall's tau is NaN for a single-candidate family.
pub fn agreement(run: &SelectionRun) -> Result<AgreementReport> {
    let table = &run.risk_table;
    let Some(tau) = table.column(RiskKind::Tau, NuisanceMode::None) else {
        bail!(
            Data,
            "agreement needs the tau_risk column, which requires ground truth"
        );
    };
    let min_tau = tau.iter().copied().fold(f64::INFINITY, f64::min);
    let ids = &table.candidate_ids;
    let mut rows = Vec::new();
    for (risk, mode) in table.columns() {
        if risk == RiskKind::Tau {
            continue;
        }
        let col = table.column(risk, mode).expect("complete column");
        let k = if col.len() >= 2 {
            kendall(&col, &tau)?
        } else {
            f64::NAN
        };
        let best = argmin_by_id(&col, ids).expect("non-empty");
        rows.push(AgreementRow {
            risk,
            mode,
            kendall: k,
            relative_kendall: 0.0,
            excess_tau_risk: (tau[best] - min_tau) / min_tau.max(1e-12),
            selected: ids[best].clone(),
        });
    }
    let mean = rows.iter().map(|r| r.kendall).sum::<f64>() / rows.len().max(1) as f64;
    rows.iter_mut()
        .for_each(|r| r.relative_kendall = r.kendall - mean);
    Ok(AgreementReport { rows })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SweepConfig {
    pub holdout_frac: f64,
    /// Nuisances behind the R-risk used for selection.
    pub nuisance_source: NuisanceSource,
    pub nuisance: NuisanceConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            holdout_frac: 0.3,
            nuisance_source: NuisanceSource::Stacked,
            nuisance: NuisanceConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SweepMetric {
    /// `|ATE on test - true ATE on holdout| / max(|true ATE on holdout|, 1e-12)`.
    AteBias,
    /// `tau_risk` of the selected model on the holdout.
    HoldoutTauRisk,
}

impl SweepMetric {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepMetric::AteBias => "ate_bias",
            SweepMetric::HoldoutTauRisk => "holdout_tau_risk",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepRow {
    pub ratio: f64,
    pub metric: SweepMetric,
    pub value: f64,
    pub selected: String,
}

/// Train/test ratio sweep. A holdout carries the true effects; the rest is
/// split at each `ratio` (train share), a candidate is selected by R-risk
/// and scored against the holdout.
pub fn split_ratio_sweep(
    data: &Dataset,
    family: &CandidateFamily,
    ratios: &[f64],
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    data.oracle()?;
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        bail!(Domain, "ratios must lie in (0, 1)");
    }
    if !(cfg.holdout_frac > 0.0 && cfg.holdout_frac < 1.0) {
        bail!(Config, "holdout fraction must lie in (0, 1)");
    }
    let n = data.n();
    let n_hold = ((n as f64) * cfg.holdout_frac).round() as usize;
    let perm = SimRng::child(cfg.seed, 0).permutation(n);
    let (mut hold, mut rest) = (perm[..n_hold].to_vec(), perm[n_hold..].to_vec());
    hold.sort_unstable();
    rest.sort_unstable();
    let smallest = ratios.iter().map(|&r| r.min(1.0 - r)).fold(1.0, f64::min);
    if n_hold == 0 || ((rest.len() as f64) * smallest).round() < 2.0 {
        bail!(Domain, "{} rows are too few for the smallest split", n);
    }
    let holdout = data.subset(&hold);
    let remainder = data.subset(&rest);
    let hold_cate = &holdout.oracle()?.cate;
    let silver = hold_cate.iter().sum::<f64>() / hold_cate.len() as f64;
    let mode: NuisanceMode = cfg.nuisance_source.into();

    let mut rows = Vec::new();
    for (k, &ratio) in ratios.iter().enumerate() {
        let sel = SelectionConfig {
            procedure: Procedure::Shared,
            split: Some(SplitFractions {
                train: ratio,
                nuisance: 0.0,
                test: 1.0 - ratio,
            }),
            nuisance_sources: alloc::vec![cfg.nuisance_source],
            nuisance: cfg.nuisance.clone(),
            seed: child_seed(cfg.seed, 1 + k as u64),
        };
        let d = select_detailed(&remainder, family, &sel)?;
        let chosen: &str = d
            .run
            .selected_for(RiskKind::R, mode)
            .expect("R-risk column");
        let model = d
            .models
            .iter()
            .find(|m| m.id() == chosen)
            .expect("selected model");
        let ate = crate::candidates::estimate_ate(model, &d.test.x)?;
        let cate = model.cate(&holdout.x);
        let tau = hold_cate
            .iter()
            .zip(&cate)
            .map(|(t, f)| (t - f) * (t - f))
            .sum::<f64>()
            / cate.len() as f64;
        rows.push(SweepRow {
            ratio,
            metric: SweepMetric::AteBias,
            value: (ate - silver).abs() / silver.abs().max(1e-12),
            selected: String::from(chosen),
        });
        rows.push(SweepRow {
            ratio,
            metric: SweepMetric::HoldoutTauRisk,
            value: tau,
            selected: String::from(chosen),
        });
    }
    Ok(rows)
}

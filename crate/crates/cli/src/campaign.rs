//! Campaign runner: many instances, each generated or loaded, measured for
//! overlap and put through the selection procedures.
//!
//! Every instance derives its seeds from `(campaign seed, instance index)`
//! only, and results are merged by index, so the output does not depend on
//! the number of worker threads.

use std::path::Path;
use std::time::Instant;

use causal_risk_core::candidates::CandidateFamily;
use causal_risk_core::datagen::Caussim;
use causal_risk_core::nuisance::NuisanceSource;
use causal_risk_core::overlap::{ntv_plugin, oracle_ntv, OverlapReport, PluginModel};
use causal_risk_core::risks::NuisanceMode;
use causal_risk_core::rng::{child_seed, SimRng};
use causal_risk_core::selection::{
    agreement, run_selection, split_ratio_sweep, SelectionConfig, SweepConfig,
};
use causal_risk_core::Dataset;
use rayon::prelude::*;

use crate::config::{CampaignConfig, CampaignKind, DataSource, NtvChoice, OverlapSettings};
use crate::csv_io::{
    load_dataset, write_file, write_results, write_sweep, ResultRow, SweepResultRow,
};
use crate::error::{CliError, Result};

const STREAM_THETA: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_SELECTION: u64 = 2;
const STREAM_SWEEP: u64 = 3;
const STREAM_OVERLAP: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum CampaignOutput {
    Agreement(Vec<ResultRow>),
    Sweep(Vec<SweepResultRow>),
}

impl CampaignOutput {
    pub fn write_to(&self, path: &Path) -> Result<()> {
        match self {
            CampaignOutput::Agreement(rows) => write_file(path, |w| write_results(w, rows)),
            CampaignOutput::Sweep(rows) => write_file(path, |w| write_sweep(w, rows)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CampaignOutput::Agreement(r) => r.len(),
            CampaignOutput::Sweep(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Instance {
    id: usize,
    seed: u64,
    theta: Option<f64>,
    data: Dataset,
    ntv: f64,
}

/// NTV of `data` per `settings`; `p_a` is the prevalence used by the oracle form.
pub fn measure_overlap(
    data: &Dataset,
    p_a: f64,
    settings: &OverlapSettings,
    seed: u64,
) -> Result<OverlapReport> {
    let plugin = |model| ntv_plugin(data, model, settings.calibrated, &settings.plugin, seed);
    let report = match settings.source {
        NtvChoice::Auto if data.oracle.is_some() => oracle_ntv(data, p_a)?,
        NtvChoice::Auto | NtvChoice::PluginGbt => plugin(PluginModel::Gbt)?,
        NtvChoice::Oracle => oracle_ntv(data, p_a)?,
        NtvChoice::PluginLinear => plugin(PluginModel::Linear)?,
    };
    Ok(report)
}

fn prepare(cfg: &CampaignConfig, id: usize, file_data: Option<&Dataset>) -> Result<Instance> {
    let seed = child_seed(cfg.seed, id as u64);
    let (theta, data, p_a) = match (&cfg.source, file_data) {
        (DataSource::Caussim(sim), _) => {
            let [lo, hi] = cfg.theta_range;
            let theta = SimRng::child(seed, STREAM_THETA).uniform_range(lo, hi);
            let mut sim = sim.clone();
            sim.seed = child_seed(seed, STREAM_DATA);
            sim.theta = theta;
            let p_a = sim.p_a;
            (Some(theta), Caussim::new(sim)?.dataset()?, p_a)
        }
        (DataSource::Csv { .. }, Some(d)) => (None, d.clone(), d.treated_rate()),
        (DataSource::Csv { path }, None) => return Err(CliError::data(path, "dataset not loaded")),
    };
    let ntv = measure_overlap(&data, p_a, &cfg.overlap, child_seed(seed, STREAM_OVERLAP))?.ntv;
    Ok(Instance {
        id,
        seed,
        theta,
        data,
        ntv,
    })
}

fn reported_mode(mode: NuisanceMode, variants: &[NuisanceSource]) -> bool {
    mode == NuisanceMode::None || variants.iter().any(|&v| NuisanceMode::from(v) == mode)
}

fn agreement_rows(
    cfg: &CampaignConfig,
    family: &CandidateFamily,
    inst: &Instance,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &procedure in &cfg.procedures {
        let sel = SelectionConfig {
            procedure,
            split: cfg.split.for_procedure(procedure),
            nuisance_sources: cfg.nuisance_variants.clone(),
            nuisance: cfg.nuisance.clone(),
            seed: child_seed(inst.seed, STREAM_SELECTION),
        };
        let mut run = run_selection(&inst.data, family, &sel)?;
        run.risk_table
            .entries
            .retain(|e| reported_mode(e.mode, &cfg.nuisance_variants));
        let report = agreement(&run)?;
        rows.extend(report.rows.into_iter().map(|r| ResultRow {
            instance_id: inst.id,
            theta: inst.theta,
            ntv: inst.ntv,
            procedure: procedure.as_str().into(),
            risk_name: r.risk.as_str().into(),
            nuisance_mode: r.mode.as_str().into(),
            kendall: r.kendall,
            relative_kendall: r.relative_kendall,
            excess_tau_risk: r.excess_tau_risk,
            selected_candidate: r.selected,
        }));
    }
    Ok(rows)
}

fn sweep_rows(
    cfg: &CampaignConfig,
    family: &CandidateFamily,
    inst: &Instance,
) -> Result<Vec<SweepResultRow>> {
    let sweep = SweepConfig {
        holdout_frac: cfg.sweep.holdout_frac,
        nuisance_source: cfg.nuisance_variants[0],
        nuisance: cfg.nuisance.clone(),
        seed: child_seed(inst.seed, STREAM_SWEEP),
    };
    let rows = split_ratio_sweep(&inst.data, family, &cfg.sweep.ratios, &sweep)?;
    Ok(rows
        .into_iter()
        .map(|r| SweepResultRow {
            instance_id: inst.id,
            theta: inst.theta,
            ntv: inst.ntv,
            ratio: r.ratio,
            metric: r.metric.as_str().into(),
            value: r.value,
            selected_candidate: r.selected,
        })
        .collect())
}

/// Runs every instance of `cfg` on at most `jobs` threads.
pub fn run_campaign(cfg: &CampaignConfig, jobs: usize) -> Result<CampaignOutput> {
    cfg.validate()?;
    let family = cfg.family.build(cfg.seed)?;
    let file_data = match &cfg.source {
        DataSource::Csv { path } => Some(load_dataset(path)?),
        DataSource::Caussim(_) => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let n = cfg.n_instances;
    log::info!(
        "campaign {}: {} instances, {} candidates, {} jobs",
        cfg.name,
        n,
        family.len(),
        jobs.max(1)
    );
    let per_instance: Vec<CampaignOutput> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|id| {
                let start = Instant::now();
                let inst = prepare(cfg, id, file_data.as_ref())?;
                let rows = match cfg.kind {
                    CampaignKind::Agreement => {
                        CampaignOutput::Agreement(agreement_rows(cfg, &family, &inst)?)
                    }
                    CampaignKind::SplitSweep => {
                        CampaignOutput::Sweep(sweep_rows(cfg, &family, &inst)?)
                    }
                };
                log::info!(
                    "instance {}/{}: theta {} ntv {:.3} ({:.1}s)",
                    id + 1,
                    n,
                    inst.theta
                        .map_or_else(|| "-".to_string(), |t| format!("{t:.3}")),
                    inst.ntv,
                    start.elapsed().as_secs_f64()
                );
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let empty = match cfg.kind {
        CampaignKind::Agreement => CampaignOutput::Agreement(Vec::new()),
        CampaignKind::SplitSweep => CampaignOutput::Sweep(Vec::new()),
    };
    Ok(per_instance
        .into_iter()
        .fold(empty, |acc, part| match (acc, part) {
            (CampaignOutput::Agreement(mut a), CampaignOutput::Agreement(b)) => {
                a.extend(b);
                CampaignOutput::Agreement(a)
            }
            (CampaignOutput::Sweep(mut a), CampaignOutput::Sweep(b)) => {
                a.extend(b);
                CampaignOutput::Sweep(a)
            }
            (acc, _) => acc,
        }))
}

//! Campaign configuration: a versioned JSON document, plus the named recipes.

use std::fs;
use std::path::{Path, PathBuf};

use causal_risk_core::candidates::{
    caussim_family, gbt_family, CandidateFamily, CaussimFamilyConfig, DEFAULT_GBT_LEARNING_RATES,
    DEFAULT_GBT_LEAVES,
};
use causal_risk_core::datagen::SimConfig;
use causal_risk_core::nuisance::{NuisanceConfig, NuisanceSource};
use causal_risk_core::overlap::PluginConfig;
use causal_risk_core::selection::{Procedure, SplitFractions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest overlap separation allowed in faithful campaigns.
pub const THETA_MAX: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignKind {
    /// Risk agreement with the oracle ranking, per procedure and nuisance variant.
    #[default]
    Agreement,
    /// Train/test ratio sweep with R-risk selection.
    SplitSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Fresh Caussim draw per instance; `seed` and `theta` are set per instance.
    Caussim(SimConfig),
    /// One file reused by every instance; instances differ by split seeds.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyChoice {
    /// Ten random bases, T and Sft learners, six ridge penalties. Seeded by
    /// the campaign seed.
    #[serde(rename = "caussim_120")]
    Caussim120,
    /// S-learner GBTs over three learning rates and six leaf counts.
    #[serde(rename = "gbt_18")]
    Gbt18,
    Caussim(CaussimFamilyConfig),
    Gbt {
        learning_rates: Vec<f64>,
        max_leaf_nodes: Vec<usize>,
    },
}

impl FamilyChoice {
    pub fn parse(name: &str) -> Option<FamilyChoice> {
        match name {
            "caussim_120" => Some(FamilyChoice::Caussim120),
            "gbt_18" => Some(FamilyChoice::Gbt18),
            _ => None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<CandidateFamily> {
        let family = match self {
            FamilyChoice::Caussim120 => {
                let mut f = caussim_family(&CaussimFamilyConfig {
                    seed,
                    ..Default::default()
                })?;
                f.name = "caussim_120".into();
                f
            }
            FamilyChoice::Gbt18 => {
                let mut f = gbt_family(&DEFAULT_GBT_LEARNING_RATES, &DEFAULT_GBT_LEAVES)?;
                f.name = "gbt_18".into();
                f
            }
            FamilyChoice::Caussim(cfg) => caussim_family(cfg)?,
            FamilyChoice::Gbt {
                learning_rates,
                max_leaf_nodes,
            } => gbt_family(learning_rates, max_leaf_nodes)?,
        };
        if family.is_empty() {
            return Err(CliError::Config("candidate family is empty".into()));
        }
        Ok(family)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NtvChoice {
    /// Oracle NTV when the data has ground truth, else calibrated GBT plug-in.
    #[default]
    Auto,
    Oracle,
    PluginLinear,
    PluginGbt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlapSettings {
    pub source: NtvChoice,
    pub calibrated: bool,
    pub plugin: PluginConfig,
}

impl Default for OverlapSettings {
    fn default() -> Self {
        OverlapSettings {
            source: NtvChoice::Auto,
            calibrated: true,
            plugin: PluginConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Splits {
    pub shared: Option<SplitFractions>,
    pub separate: Option<SplitFractions>,
}

impl Splits {
    pub fn for_procedure(&self, p: Procedure) -> Option<SplitFractions> {
        match p {
            Procedure::Shared => self.shared,
            Procedure::Separate => self.separate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub ratios: Vec<f64>,
    pub holdout_frac: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            ratios: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            holdout_frac: 0.3,
        }
    }
}

fn default_theta_range() -> [f64; 2] {
    [0.0, THETA_MAX]
}

fn default_variants() -> Vec<NuisanceSource> {
    vec![NuisanceSource::Stacked]
}

fn default_procedures() -> Vec<Procedure> {
    vec![Procedure::Shared]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub kind: CampaignKind,
    pub n_instances: usize,
    pub seed: u64,
    /// Instance overlap drawn uniformly in `[lo, hi]`.
    #[serde(default = "default_theta_range")]
    pub theta_range: [f64; 2],
    /// Restricts `theta_range` to `[0, 2.5]`.
    #[serde(default)]
    pub paper_faithful: bool,
    pub source: DataSource,
    pub family: FamilyChoice,
    /// Fitted or oracle nuisances whose risk columns are reported.
    #[serde(default = "default_variants")]
    pub nuisance_variants: Vec<NuisanceSource>,
    #[serde(default = "default_procedures")]
    pub procedures: Vec<Procedure>,
    #[serde(default)]
    pub split: Splits,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default)]
    pub overlap: OverlapSettings,
    #[serde(default)]
    pub sweep: SweepSettings,
    /// Used when no output path is given on the command line.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: CampaignConfig = serde_json::from_str(text).map_err(|source| CliError::Json {
            path: origin.into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative dataset path is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        if let (DataSource::Csv { path: data }, Some(dir)) = (&mut cfg.source, path.parent()) {
            if data.is_relative() {
                *data = dir.join(&*data);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        if self.n_instances == 0 {
            return bad("n_instances must be >= 1".into());
        }
        let [lo, hi] = self.theta_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!(
                "theta_range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
            ));
        }
        if self.paper_faithful && hi > THETA_MAX {
            return bad(format!(
                "theta_range must lie in [0, {THETA_MAX}] for faithful campaigns"
            ));
        }
        if self.nuisance_variants.is_empty() || self.procedures.is_empty() {
            return bad("nuisance_variants and procedures must be non-empty".into());
        }
        if self.kind == CampaignKind::SplitSweep {
            let r = &self.sweep.ratios;
            if r.is_empty() || r.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return bad("sweep ratios must be non-empty and lie in (0, 1)".into());
            }
            if self.nuisance_variants.len() != 1 {
                return bad("a split sweep takes exactly one nuisance variant".into());
            }
        }
        if let DataSource::Caussim(sim) = &self.source {
            let mut probe = sim.clone();
            probe.theta = lo;
            probe.validate()?;
        }
        Ok(())
    }
}

/// Names of the shipped recipes.
pub const RECIPES: [&str; 4] = ["fig4_desk", "fig6_desk", "fig7_desk", "fig8_desk"];

/// Desk-scale versions of the reference experiments.
pub fn recipe(name: &str) -> Option<CampaignConfig> {
    let base = CampaignConfig {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        kind: CampaignKind::Agreement,
        n_instances: 50,
        seed: 0,
        theta_range: [0.0, THETA_MAX],
        paper_faithful: true,
        source: DataSource::Caussim(SimConfig {
            n: 5000,
            ..SimConfig::default()
        }),
        family: FamilyChoice::Caussim120,
        nuisance_variants: vec![NuisanceSource::Stacked],
        procedures: vec![Procedure::Shared],
        split: Splits::default(),
        nuisance: NuisanceConfig::default(),
        overlap: OverlapSettings::default(),
        sweep: SweepSettings::default(),
        output: None,
    };
    let cfg = match name {
        // Risks across overlap tertiles.
        "fig4_desk" => base,
        // Shared versus separate nuisance set.
        "fig6_desk" => CampaignConfig {
            n_instances: 30,
            procedures: vec![Procedure::Shared, Procedure::Separate],
            ..base
        },
        // Linear versus stacked nuisances.
        "fig7_desk" => CampaignConfig {
            n_instances: 30,
            nuisance_variants: vec![NuisanceSource::Linear, NuisanceSource::Stacked],
            ..base
        },
        // Train/test ratio sweep.
        "fig8_desk" => CampaignConfig {
            kind: CampaignKind::SplitSweep,
            n_instances: 10,
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}

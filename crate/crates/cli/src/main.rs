use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use causal_risk::campaign::{measure_overlap, run_campaign};
use causal_risk::config::{
    recipe, CampaignConfig, FamilyChoice, NtvChoice, OverlapSettings, RECIPES,
};
use causal_risk::csv_io::{
    load_dataset, save_dataset, write_file, write_manifest, write_risk_table,
};
use causal_risk::error::{CliError, Result};
use causal_risk_core::datagen::{simulate, SimConfig};
use causal_risk_core::nuisance::NuisanceSource;
use causal_risk_core::selection::{run_selection, Procedure, SelectionConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "causal-risk",
    version,
    about = "Audit causal model-selection risks on simulated or tabular data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a Caussim dataset from a JSON simulation config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one selection and write the risk table.
    Select {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "caussim_120")]
        family: String,
        #[arg(long, value_enum, default_value_t = ProcedureArg::Shared)]
        procedure: ProcedureArg,
        #[arg(long, value_enum, default_value_t = NuisanceArg::Stacked)]
        nuisance: NuisanceArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the family manifest (`id,meta,params`).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Normalized total variation of a dataset, as a one-row CSV on stdout.
    Ntv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = NtvArg::Auto)]
        source: NtvArg,
        /// Skip Platt calibration of the plug-in propensity.
        #[arg(long)]
        uncalibrated: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a campaign from a config file or a named recipe.
    Campaign {
        #[arg(long, conflicts_with = "recipe", required_unless_present = "recipe")]
        config: Option<PathBuf>,
        /// One of fig4_desk, fig6_desk, fig7_desk, fig8_desk.
        #[arg(long)]
        recipe: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the number of instances.
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print a recipe as a JSON config.
    Recipe { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcedureArg {
    Shared,
    Separate,
}

#[derive(Clone, Copy, ValueEnum)]
enum NuisanceArg {
    Oracle,
    Linear,
    Stacked,
}

#[derive(Clone, Copy, ValueEnum)]
enum NtvArg {
    Auto,
    Oracle,
    PluginLinear,
    PluginGbt,
}

fn family(name: &str, seed: u64) -> Result<causal_risk_core::candidates::CandidateFamily> {
    FamilyChoice::parse(name)
        .ok_or_else(|| {
            CliError::Config(format!(
                "unknown family {name:?}; expected caussim_120 or gbt_18"
            ))
        })?
        .build(seed)
}

fn named_recipe(name: &str) -> Result<CampaignConfig> {
    recipe(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown recipe {name:?}; expected one of {}",
            RECIPES.join(", ")
        ))
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let text = fs::read_to_string(&config).map_err(|e| CliError::io(&config, e))?;
            let sim: SimConfig = serde_json::from_str(&text).map_err(|source| CliError::Json {
                path: config.clone(),
                source,
            })?;
            let data = simulate(&sim)?;
            save_dataset(&out, &data)?;
            log::info!("wrote {} rows to {}", data.n(), out.display());
        }
        Command::Select {
            data,
            family: name,
            procedure,
            nuisance,
            seed,
            out,
            manifest,
        } => {
            let data = load_dataset(&data)?;
            let fam = family(&name, seed)?;
            let cfg = SelectionConfig {
                procedure: match procedure {
                    ProcedureArg::Shared => Procedure::Shared,
                    ProcedureArg::Separate => Procedure::Separate,
                },
                nuisance_sources: vec![match nuisance {
                    NuisanceArg::Oracle => NuisanceSource::Oracle,
                    NuisanceArg::Linear => NuisanceSource::Linear,
                    NuisanceArg::Stacked => NuisanceSource::Stacked,
                }],
                seed,
                ..SelectionConfig::default()
            };
            let run = run_selection(&data, &fam, &cfg)?;
            write_file(&out, |w| write_risk_table(w, &run.risk_table))?;
            if let Some(path) = manifest {
                write_file(&path, |w| write_manifest(w, &fam))?;
            }
            for s in &run.selected {
                log::info!(
                    "{} [{}] selects {}",
                    s.risk.as_str(),
                    s.mode.as_str(),
                    s.candidate_id
                );
            }
        }
        Command::Ntv {
            data,
            source,
            uncalibrated,
            seed,
        } => {
            let path = data;
            let data = load_dataset(&path)?;
            let settings = OverlapSettings {
                calibrated: !uncalibrated,
                ..OverlapSettings::default()
            };
            let choice = match source {
                NtvArg::Auto => NtvChoice::Auto,
                NtvArg::Oracle => NtvChoice::Oracle,
                NtvArg::PluginLinear => NtvChoice::PluginLinear,
                NtvArg::PluginGbt => NtvChoice::PluginGbt,
            };
            let settings = OverlapSettings {
                source: choice,
                ..settings
            };
            let report = measure_overlap(&data, data.treated_rate(), &settings, seed)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "ntv,source,calibrated")
                .and_then(|_| {
                    writeln!(
                        stdout,
                        "{:.16e},{},{}",
                        report.ntv,
                        report.source.as_str(),
                        report.calibrated
                    )
                })
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
        }
        Command::Campaign {
            config,
            recipe,
            out,
            jobs,
            instances,
            manifest,
        } => {
            let mut cfg = match (config, recipe) {
                (Some(path), _) => CampaignConfig::load(&path)?,
                (None, Some(name)) => named_recipe(&name)?,
                (None, None) => {
                    return Err(CliError::Config(
                        "either --config or --recipe is required".into(),
                    ))
                }
            };
            if let Some(n) = instances {
                cfg.n_instances = n;
            }
            let out = out.or_else(|| cfg.output.clone()).ok_or_else(|| {
                CliError::Config("no output path: pass --out or set output in the config".into())
            })?;
            let results = run_campaign(&cfg, jobs)?;
            results.write_to(&out)?;
            if let Some(path) = manifest {
                let fam = cfg.family.build(cfg.seed)?;
                write_file(&path, |w| write_manifest(w, &fam))?;
            }
            log::info!("wrote {} rows to {}", results.len(), out.display());
        }
        Command::Recipe { name } => {
            println!("{}", named_recipe(&name)?.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {}", e.kind(), msg);
            ExitCode::FAILURE
        }
    }
}

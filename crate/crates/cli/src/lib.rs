//! File formats, campaign configuration and the campaign runner for
//! `causal-risk-core`.

pub mod campaign;
pub mod config;
pub mod csv_io;
pub mod error;

pub use campaign::{run_campaign, CampaignOutput};
pub use config::{recipe, CampaignConfig, RECIPES};
pub use error::{CliError, Result};

//! TOML configuration file. Every key is optional; command-line flags win over file values.
//!
//! ```toml
//! seed = 7
//! threads = 4
//! out = "records.jsonl"
//!
//! [theory]
//! order = 3
//! k_max = 5
//! u_min = -2.0
//! u_max = 0.0
//! points = 401
//!
//! [campaign]            # any campaign field, e.g.
//! sizes = [25, 50, 100]
//! trials = 200
//! compute_index = true
//! [campaign.descent]
//! step0 = 0.2
//! gradient = { mode = "subsampled", fraction = 0.25, steps = 4000 }
//!
//! [report]
//! bins = 40
//! order = 3
//! k_max = 5
//!
//! [approx]
//! check = "sign-corr"
//! grid = [0.1, 0.3, 0.5]
//! samples = 100000
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use landscape_core::campaign::{CampaignConfig, ReportOptions};
use serde::Deserialize;

use crate::ApproxCheck;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub theory: Option<TheoryFile>,
    pub campaign: Option<CampaignConfig>,
    pub report: Option<ReportOptions>,
    pub approx: Option<ApproxFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryFile {
    pub order: Option<u32>,
    pub k_max: Option<u32>,
    pub u_min: Option<f64>,
    pub u_max: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxFile {
    pub check: Option<ApproxCheck>,
    pub grid: Option<Vec<f64>>,
    pub samples: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

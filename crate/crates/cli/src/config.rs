//! Fit settings merged from flags, an optional TOML file and defaults.

use std::path::Path;

use mfda_core::ingest::GridPolicy;
use mfda_core::mfpca::{FitConfig, MeasureMeanMode};
use mfda_core::smooth::DEFAULT_BANDWIDTH;
use mfda_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::FitArgs;

/// Keys accepted in a `--config` file. All are optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub channel: Option<String>,
    pub levels: Option<usize>,
    pub pve: Option<f64>,
    pub smooth: Option<bool>,
    pub bandwidth: Option<f64>,
    pub zero_measure_means: Option<bool>,
    pub grid_policy: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Effective fit settings, echoed into the fit manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveFit {
    pub channel: Option<String>,
    pub levels: usize,
    pub pve: f64,
    pub smooth: bool,
    pub bandwidth: Option<f64>,
    pub zero_measure_means: bool,
    pub grid_policy: String,
    pub config_file: Option<String>,
}

impl EffectiveFit {
    pub fn resolve(args: &FitArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let defaults = FitConfig::default();
        let bandwidth = args.bandwidth.or(file.bandwidth);
        let smooth = args.smooth || bandwidth.is_some() || file.smooth.unwrap_or(false);
        let grid_policy = args
            .grid_policy
            .clone()
            .or(file.grid_policy)
            .unwrap_or_else(|| "strict".into());
        grid_policy.parse::<GridPolicy>()?;
        Ok(EffectiveFit {
            channel: args.channel.clone().or(file.channel),
            levels: args.levels.or(file.levels).unwrap_or(defaults.levels),
            pve: args.pve.or(file.pve).unwrap_or(defaults.pve),
            smooth,
            bandwidth: smooth.then(|| bandwidth.unwrap_or(DEFAULT_BANDWIDTH)),
            zero_measure_means: args.zero_measure_means || file.zero_measure_means.unwrap_or(false),
            grid_policy,
            config_file: args.config.as_ref().map(|p| p.display().to_string()),
        })
    }

    pub fn grid_policy(&self) -> GridPolicy {
        self.grid_policy.parse().unwrap_or(GridPolicy::Strict)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            levels: self.levels,
            pve: self.pve,
            bandwidth: self.bandwidth,
            measure_means: if self.zero_measure_means {
                MeasureMeanMode::Zero
            } else {
                MeasureMeanMode::Estimate
            },
        }
    }
}

//! Run configuration: one JSON file drives every command.
//!
//! The file is split into per-command blocks so a single config can back a
//! whole pipeline run. Unknown keys anywhere are rejected; that guards
//! against silently ignored typos in long parameter names.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::SimConfig;

/// Config schema version understood by this build.
pub const FORMAT_VERSION: u32 = 1;

/// Input file locations for the data-driven commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub prices: PathBuf,
    pub classification: PathBuf,
    pub policies: PathBuf,
    pub calendar: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_free: Option<PathBuf>,
}

/// Index construction and backtest parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexParams {
    pub schemes: Vec<String>,
    pub base_date: NaiveDate,
    /// Proportional cost per unit of value traded (for example 0.0040).
    #[serde(default)]
    pub tc_rate: f64,
    #[serde(default = "default_initial_value")]
    pub initial_value: f64,
}

fn default_initial_value() -> f64 {
    100.0
}

/// Performance-statistics parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsParams {
    /// Index path CSVs to analyze.
    pub index_paths: Vec<PathBuf>,
    /// Constant annual risk-free rate when no series file is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_free_rate: Option<f64>,
    #[serde(default = "default_window_years")]
    pub window_years: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_window_years() -> f64 {
    10.0
}

fn default_confidence() -> f64 {
    0.99
}

/// Efficiency-test parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestParams {
    /// Benchmark index path CSVs; each yields one pooled test row.
    pub benchmarks: Vec<PathBuf>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapParams {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_mean_block_length")]
    pub mean_block_length: f64,
}

fn default_replicates() -> usize {
    1000
}

fn default_mean_block_length() -> f64 {
    20.0
}

impl Default for BootstrapParams {
    fn default() -> Self {
        BootstrapParams {
            replicates: default_replicates(),
            mean_block_length: default_mean_block_length(),
        }
    }
}

/// Growth-optimal solver inputs: drift vector and driver-loading matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpParams {
    /// Appreciation rates, one per stock.
    pub a: Vec<f64>,
    /// Driver loadings, one row per stock.
    pub b: Vec<Vec<f64>>,
}

/// Diversification-scan parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    /// "EWI" or "concentrated".
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    pub m_list: Vec<usize>,
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanParams>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: FORMAT_VERSION,
            out_dir: default_out_dir(),
            seed: 0,
            data: None,
            index: None,
            stats: None,
            test: None,
            gp: None,
            sim: None,
            scan: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::usage(format!("{}: {e}", path.display())))?;
        if config.format_version != FORMAT_VERSION {
            return Err(Error::usage(format!(
                "config format version {} (this build reads {FORMAT_VERSION})",
                config.format_version
            )));
        }
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// The block for a command, or a usage error naming what is missing.
    pub fn require<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T> {
        block
            .as_ref()
            .ok_or_else(|| Error::usage(format!("config is missing the \"{name}\" block")))
    }
}

// ============================================================================
// Tests
// ============================================================================

//! Experiment configuration, protocols, metrics logging and reports.

mod config;
mod metrics;
mod protocol;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use thiserror::Error;

use crate::data::{load_dataset, DataError};
use crate::emergence::{emergence_conv, emergence_mlp, ln_biguint, EmergenceError};
use crate::instrument::ActiveCounts;
use crate::nn::NnError;
use crate::pruning::{export_mask, PruneError};

pub use config::{ExperimentConfig, Protocol};
pub use metrics::{BranchOutcome, BranchStatus, EpochRecord, MetricsLog, RunManifest, SplitRecord};
pub use protocol::{run_protocol, scale_hidden, smaller_architecture, BranchResult, RunOutput};
pub use report::{emit_report, svg_charts, write_csv, ReportFormat, CSV_HEADER};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Emergence(#[from] EmergenceError),
    #[error(transparent)]
    Prune(#[from] PruneError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

/// Writes `config.json`, `metrics.jsonl` and `masks/<branch>/` for pruned branches.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg_text = serde_json::to_string_pretty(&out.log.manifest.config).expect("config serializes");
    fs::write(&cfg_path, cfg_text + "\n").map_err(|e| HarnessError::io(&cfg_path, e))?;
    let metrics_path = dir.join(METRICS_FILE);
    fs::write(&metrics_path, out.log.to_jsonl()?).map_err(|e| HarnessError::io(&metrics_path, e))?;
    for branch in &out.branches {
        if let Some(mask) = &branch.mask {
            export_mask(mask, &dir.join("masks").join(&branch.name))?;
        }
    }
    Ok(())
}

pub fn read_run(dir: &Path) -> Result<MetricsLog, HarnessError> {
    let path = dir.join(METRICS_FILE);
    let file = fs::File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
    MetricsLog::read_jsonl(std::io::BufReader::new(file))
}

/// Loads the dataset through the cache, runs the protocol and writes the run directory.
pub fn run_experiment(cfg: &ExperimentConfig, cache_dir: &Path, out_dir: &Path) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let (train, test) = load_dataset(cfg.dataset, cache_dir)?;
    let out = run_protocol(cfg, &train, &test)?;
    write_run(&out, out_dir)?;
    Ok(out)
}

/// Closed-form emergence for explicit counts: exact value and natural log.
pub fn oracle(shape: &[u64], active: &[u64], filters: Option<&[u64]>) -> Result<(BigUint, f64), HarnessError> {
    let counts = ActiveCounts::from_slices(shape, active)?;
    let e = match filters {
        Some(f) => emergence_conv(&counts, f)?,
        None => emergence_mlp(&counts),
    };
    let ln = ln_biguint(&e);
    Ok((e, ln))
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::error::CliResult;
use crate::source::Fingerprint;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Values the run actually used after filling in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub lambda0: f64,
    /// Median-heuristic lengthscale shared by every dimension at start.
    pub ell0: f64,
    pub m: usize,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub t: Option<usize>,
    pub ste: Option<bool>,
    pub sigma2: f64,
    pub prop_reg_factor: f64,
    pub metric: String,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub seed: u64,
    pub data_seed: u64,
    /// Seed of the fixed probe set (STE runs only).
    pub probe_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    /// Mean wall clock per evaluated epoch, one entry per optimization run.
    pub per_epoch_seconds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub args: Command,
    pub resolved: Resolved,
    pub seeds: Seeds,
    pub dataset: Fingerprint,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub timings: Timings,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

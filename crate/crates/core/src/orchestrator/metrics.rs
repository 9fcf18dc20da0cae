//! Per-epoch metrics as line-delimited JSON.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::PpoReport;
use crate::dreaming::PerturbationCounts;
use crate::error::{Error, Result};
use crate::worldmodel::WorldModelLossReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Day,
    Night,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub run_mode: String,
    pub env: String,
    pub seed: u64,
    pub phase: Phase,
    /// Index within the phase, starting at 0.
    pub epoch: usize,
    /// Index over the whole run.
    pub global_epoch: usize,
    pub real_steps: usize,
    /// Mean undiscounted return on training levels.
    pub train_reward: f64,
    /// Mean undiscounted return on the full level distribution.
    pub test_reward: f64,
    pub test_returns: Vec<f64>,
    pub world: Option<WorldModelLossReport>,
    pub ppo: PpoReport,
    /// Mean predicted reward per imagined step.
    pub dream_reward: Option<f64>,
    pub perturbations: Option<PerturbationCounts>,
    /// World-model parameter fingerprint at the end of the epoch (hex).
    pub world_hash: String,
    pub replay_steps: usize,
}

/// Append-only metrics file.
#[derive(Debug)]
pub struct MetricsLog {
    path: PathBuf,
    records: usize,
}

impl MetricsLog {
    /// Opens (or creates) the log, keeping only the first `keep` records when given.
    pub fn open(path: impl Into<PathBuf>, keep: Option<usize>) -> Result<Self> {
        let path = path.into();
        let mut records = if path.exists() { read_metrics(&path)? } else { Vec::new() };
        if let Some(k) = keep {
            if k > records.len() {
                return Err(Error::Checkpoint(format!(
                    "metrics log holds {} records, checkpoint expects {k}",
                    records.len()
                )));
            }
            records.truncate(k);
        }
        let mut text = String::new();
        for r in &records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            records: records.len(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records == 0
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.records += 1;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Wall-clock seconds per epoch, kept apart from the metrics so that those
/// stay bit-reproducible.
#[derive(Debug)]
pub struct Timings {
    path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub seconds: f64,
}

impl Timings {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn append(&self, record: &TimingRecord) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }
}

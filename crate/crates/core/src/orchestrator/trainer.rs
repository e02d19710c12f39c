//! Training dispatch: write the network, run a trainer, read `result.json` back.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graphops::BlockDigest;
use crate::modtree::TrainOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Ok,
    /// Stopped early because the loss was not improving.
    Diverged,
    Failed,
}

/// The trainer's `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub accuracy_val: f64,
    pub accuracy_test: f64,
    pub status: TrainStatus,
    pub epochs_run: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("trainer i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trainer exited with {status}: {stderr}")]
    Exit { status: String, stderr: String },
    #[error("malformed result file {path}: {reason}")]
    Result { path: PathBuf, reason: String },
}

pub struct TrainRequest<'a> {
    pub network: &'a Path,
    /// Where `result.json` goes.
    pub result: &'a Path,
    pub digest: &'a BlockDigest,
    pub seed: u64,
}

pub trait Trainer: Send + Sync {
    fn train(&self, request: &TrainRequest<'_>) -> Result<TrainResult, TrainError>;
}

fn write_result(path: &Path, result: &TrainResult) -> Result<(), TrainError> {
    let mut text = serde_json::to_string_pretty(result).map_err(std::io::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_result(path: &Path) -> Result<TrainResult, TrainError> {
    let text = fs::read_to_string(path)?;
    let result: TrainResult =
        serde_json::from_str(&text).map_err(|e| TrainError::Result { path: path.to_path_buf(), reason: e.to_string() })?;
    for a in [result.accuracy_val, result.accuracy_test] {
        if !(0.0..=1.0).contains(&a) {
            return Err(TrainError::Result { path: path.to_path_buf(), reason: format!("accuracy {a} outside [0, 1]") });
        }
    }
    Ok(result)
}

/// Deterministic stand-in: accuracy is a hash of the cell digest and seed, in [0.60, 0.90].
#[derive(Debug, Clone, Default)]
pub struct StubTrainer {
    /// Digests reported as diverged.
    pub diverge: Vec<BlockDigest>,
}

impl StubTrainer {
    pub fn accuracy(digest: &BlockDigest, seed: u64) -> (f64, f64) {
        let mut hasher = Sha256::new();
        hasher.update(digest.0);
        hasher.update(seed.to_le_bytes());
        let h = hasher.finalize();
        let unit = f64::from(u16::from_le_bytes([h[0], h[1]])) / f64::from(u16::MAX);
        let val = ((0.60 + 0.30 * unit) * 10_000.0).round() / 10_000.0;
        let gap = f64::from(h[2] % 200) / 10_000.0;
        (val, ((val - gap) * 10_000.0).round() / 10_000.0)
    }
}

impl Trainer for StubTrainer {
    fn train(&self, request: &TrainRequest<'_>) -> Result<TrainResult, TrainError> {
        let result = if self.diverge.contains(request.digest) {
            TrainResult {
                accuracy_val: 0.0,
                accuracy_test: 0.0,
                status: TrainStatus::Diverged,
                epochs_run: 3,
                reason: Some("loss did not decrease".into()),
            }
        } else {
            let (accuracy_val, accuracy_test) = StubTrainer::accuracy(request.digest, request.seed);
            TrainResult { accuracy_val, accuracy_test, status: TrainStatus::Ok, epochs_run: 200, reason: None }
        };
        write_result(request.result, &result)?;
        Ok(result)
    }
}

/// Runs `program args... --network <json> --out <result> --seed <seed> [--profile <p>]`.
#[derive(Debug, Clone)]
pub struct CommandTrainer {
    pub command: Vec<String>,
    pub profile: Option<PathBuf>,
}

impl Trainer for CommandTrainer {
    fn train(&self, request: &TrainRequest<'_>) -> Result<TrainResult, TrainError> {
        let (program, args) = self.command.split_first().ok_or_else(|| TrainError::Exit {
            status: "not started".into(),
            stderr: "empty trainer command".into(),
        })?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .arg("--network")
            .arg(request.network)
            .arg("--out")
            .arg(request.result)
            .arg("--seed")
            .arg(request.seed.to_string());
        if let Some(profile) = &self.profile {
            cmd.arg("--profile").arg(profile);
        }
        let output = cmd.output()?;
        if !output.status.success() {
            return Err(TrainError::Exit {
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        read_result(request.result)
    }
}

/// Trains once per seed and averages. Any diverged or failed seed fails the node.
pub fn train_seeds(
    trainer: &dyn Trainer,
    network: &Path,
    digest: &BlockDigest,
    seeds: &[u64],
) -> Result<(TrainOutcome, Option<String>), TrainError> {
    let dir = network.parent().unwrap_or(Path::new("."));
    let (mut val, mut test) = (0.0, 0.0);
    for &seed in seeds {
        let name = if seeds.len() == 1 { "result.json".to_string() } else { format!("result-{seed}.json") };
        let result = trainer.train(&TrainRequest { network, result: &dir.join(name), digest, seed })?;
        if result.status != TrainStatus::Ok {
            let reason = result.reason.unwrap_or_else(|| format!("{:?} with seed {seed}", result.status).to_lowercase());
            return Ok((TrainOutcome::FailedTraining, Some(reason)));
        }
        val += result.accuracy_val;
        test += result.accuracy_test;
    }
    let k = seeds.len() as f64;
    Ok((TrainOutcome::Trained { accuracy_val: val / k, accuracy_test: test / k }, None))
}

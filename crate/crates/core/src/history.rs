//! The append-only record of design iterations.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Attempt, Dialogue, Proposal, Usage};
use crate::dsl::Block;
use crate::graphops::BlockDigest;
use crate::modtree::NodeId;

/// How an iteration ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Trained { node: NodeId },
    TrainingFailed { node: NodeId, reason: String },
    /// The cell matched an existing node; nothing was trained.
    Duplicate { of: NodeId },
    /// No valid cell within the retry budget.
    InvalidBlock,
    /// No valid stem and downsample pair within the retry budget.
    CompanionFailed,
    /// The network could not be sized under the budgets.
    Infeasible { reason: String },
    /// A model call or reply parse failed.
    AgentFailure { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: u64,
    pub proposal: Proposal,
    /// Validation accuracy of the modified node at proposal time.
    pub parent_accuracy: Option<f64>,
    pub dialogue: Option<Dialogue>,
    pub attempts: Vec<Attempt>,
    #[serde(default)]
    pub companion_attempts: Vec<Attempt>,
    pub verdict: Verdict,
    pub block: Option<Block>,
    pub digest: Option<BlockDigest>,
    pub accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Logical clock ticks; see the orchestrator's clock.
    pub started: u64,
    pub finished: u64,
    pub usage: Usage,
}

impl HistoryEntry {
    pub fn trained_node(&self) -> Option<NodeId> {
        match self.verdict {
            Verdict::Trained { node } => Some(node),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HistoryLog {
    entries: Vec<HistoryEntry>,
}

impl HistoryLog {
    pub fn new() -> HistoryLog {
        HistoryLog::default()
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: HistoryEntry) {
        self.entries.push(entry);
    }

    pub fn usage(&self) -> Usage {
        let mut total = Usage::default();
        for e in &self.entries {
            total += e.usage;
        }
        total
    }

    pub fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }

    /// Appends one entry as a JSON line.
    pub fn append_to(path: &Path, entry: &HistoryEntry) -> std::io::Result<()> {
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut line = serde_json::to_string(entry).map_err(std::io::Error::from)?;
        line.push('\n');
        file.write_all(line.as_bytes())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&serde_json::to_string(e).map_err(std::io::Error::from)?);
            text.push('\n');
        }
        fs::write(path, text)
    }

    /// Reads a JSON-lines history; a missing file is an empty log.
    pub fn load(path: &Path) -> std::io::Result<HistoryLog> {
        let text = match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HistoryLog::new()),
            Err(e) => return Err(e),
        };
        let mut log = HistoryLog::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("history line {}: {e}", i + 1))
            })?;
            log.push(entry);
        }
        Ok(log)
    }
}

//! Whole-network assembly from blocks, resource counting, width search and emission.

mod assemble;
mod emit;
mod resources;
mod width;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assemble::{assemble, NetNode, NetworkGraph};
pub use emit::{emit, Backend, BackendRegistry, EmittedFile, JsonBackend, OpTemplate, TemplateBackend, NETWORK_SCHEMA_VERSION};
pub use resources::{count_resources, node_resources, ResourceCount};
pub use width::{assemble_at_best, search_width, WidthSearch};

use crate::validate::Role;

/// Candidate widths: `start, start + step, ...` up to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthGrid {
    pub start: i64,
    pub step: i64,
    pub max: i64,
}

impl Default for WidthGrid {
    fn default() -> Self {
        WidthGrid { start: 8, step: 8, max: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroConfig {
    pub stacks: u32,
    pub cells_per_stack: u32,
    pub input_channels: i64,
    pub resolution: (i64, i64),
    pub num_classes: i64,
    /// Batch size used when resolving shapes; resources are reported per sample.
    pub batch: i64,
    pub max_params: u64,
    /// Multiply-accumulate budget.
    pub max_macs: u64,
    pub grid: WidthGrid,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            stacks: 3,
            cells_per_stack: 5,
            input_channels: 3,
            resolution: (32, 32),
            num_classes: 10,
            batch: 1,
            max_params: 1_500_000,
            max_macs: 200_000_000,
            grid: WidthGrid::default(),
        }
    }
}

impl MacroConfig {
    pub fn check(&self) -> Result<(), CodegenError> {
        let positive = [
            self.input_channels,
            self.resolution.0,
            self.resolution.1,
            self.num_classes,
            self.batch,
            self.grid.start,
            self.grid.step,
        ];
        if self.stacks == 0 || self.cells_per_stack == 0 || positive.iter().any(|v| *v < 1) || self.grid.max < self.grid.start {
            return Err(CodegenError::InvalidMacro(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodegenError {
    #[error("invalid macro configuration: {0}")]
    InvalidMacro(String),
    #[error("{role} block is invalid: {context}")]
    InvalidBlock { role: Role, context: String },
    #[error("{section} node {node}: {reason}")]
    Assembly { section: String, node: usize, reason: String },
    #[error("no width in the grid satisfies the budgets ({0})")]
    Infeasible(String),
    #[error("unknown backend '{0}'")]
    UnknownBackend(String),
    #[error("network JSON: {0}")]
    Json(String),
}

//! The end-to-end design loop, its configuration, training dispatch, benchmark and cost accounting.

mod bench;
mod config;
mod design;
mod trainer;

use thiserror::Error;

pub use bench::{
    run_benchmark, BenchMetrics, BenchSample, ExpectOpsJudge, Judge, SampleResult,
};
pub use config::{
    build_embedder, build_llm, EmbeddingConfig, EmbeddingKind, LlmConfig, LlmKind, PathsConfig, Prices, RunConfig,
    TrainerConfig, TrainerKind,
};
pub use design::{load_arch, run_design, run_design_from_config, RunDir, RunHooks, RunOutcome, Services, CHECKPOINT_VERSION};
pub use trainer::{
    read_result, train_seeds, CommandTrainer, StubTrainer, TrainError, TrainRequest, TrainResult, TrainStatus, Trainer,
};

use crate::agents::{LlmError, Usage};
use crate::codegen::CodegenError;
use crate::history::HistoryLog;
use crate::knowledge::{EmbedError, KnowledgeError, StoreError};
use crate::modtree::TreeError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("initial architecture: {0}")]
    InvalidInitial(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("aborted after iteration {iteration}")]
    Aborted { iteration: u64 },
}

/// Cost of `usage` at `prices`.
pub fn account_usage(usage: Usage, prices: &Prices) -> f64 {
    usage.input_tokens as f64 * prices.input_per_million / 1e6 + usage.output_tokens as f64 * prices.output_per_million / 1e6
}

/// Cost of every model call recorded in `history`.
pub fn account_cost(history: &HistoryLog, prices: &Prices) -> f64 {
    account_usage(history.usage(), prices)
}

//! The run configuration document (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::agents::{LlmClient, RecordingClient, RemoteClient, ReplayClient, ScriptedClient};
use crate::agents::{DEFAULT_API_KEY_VAR, DEFAULT_ENDPOINT, DEFAULT_MODEL};
use crate::codegen::MacroConfig;
use crate::knowledge::{
    check_bands, EmbeddingProvider, HashingEmbedder, RemoteEmbedder, DEFAULT_BANDS, DEFAULT_EMBEDDING_ENDPOINT,
    DEFAULT_EMBEDDING_MODEL, DEFAULT_HASHING_DIM,
};
use crate::modtree::SelectionPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    Replay,
    Remote,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub kind: LlmKind,
    /// Transcript served by the replay client.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_key_var")]
    pub api_key_var: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Append every exchange to this transcript.
    #[serde(default)]
    pub record: Option<PathBuf>,
}

fn default_endpoint() -> String {
    DEFAULT_ENDPOINT.to_string()
}

fn default_model() -> String {
    DEFAULT_MODEL.to_string()
}

fn default_key_var() -> String {
    DEFAULT_API_KEY_VAR.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Hashing,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_embedding_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_embedding_model")]
    pub model: String,
    #[serde(default = "default_key_var")]
    pub api_key_var: String,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: EmbeddingKind::Hashing,
            dim: DEFAULT_HASHING_DIM,
            endpoint: default_embedding_endpoint(),
            model: default_embedding_model(),
            api_key_var: default_key_var(),
        }
    }
}

fn default_dim() -> usize {
    DEFAULT_HASHING_DIM
}

fn default_embedding_endpoint() -> String {
    DEFAULT_EMBEDDING_ENDPOINT.to_string()
}

fn default_embedding_model() -> String {
    DEFAULT_EMBEDDING_MODEL.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Stub,
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub kind: TrainerKind,
    /// Program and leading arguments; `--network`, `--out` and `--seed` are appended.
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default)]
    pub profile: Option<PathBuf>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig { kind: TrainerKind::Stub, command: Vec::new(), profile: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Knowledge store (JSON lines).
    pub knowledge: PathBuf,
    /// Directory holding `cell.txt`, `stem.txt` and `downsample.txt` of the base network.
    pub initial: PathBuf,
    pub output: PathBuf,
}

/// Currency per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prices {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl Default for Prices {
    fn default() -> Self {
        Prices { input_per_million: 2.5, output_per_million: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of architectures to train.
    pub n: u32,
    #[serde(default = "default_max_retry")]
    pub max_retry: u32,
    /// Loop guard; defaults to ten iterations per requested architecture.
    #[serde(default)]
    pub max_iterations: Option<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Inspirations offered to the proposer.
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default = "default_per_band")]
    pub per_band: usize,
    #[serde(default = "default_bands")]
    pub bands: Vec<(f64, f64)>,
    #[serde(default = "default_backends")]
    pub backends: Vec<String>,
    #[serde(default, rename = "macro")]
    pub macro_config: MacroConfig,
    #[serde(default)]
    pub selection: SelectionPolicy,
    pub llm: LlmConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    pub paths: PathsConfig,
    #[serde(default)]
    pub prices: Prices,
    /// The document as read, written verbatim into the run directory.
    #[serde(skip)]
    pub source: Option<String>,
}

fn default_max_retry() -> u32 {
    3
}

fn default_seeds() -> Vec<u64> {
    vec![777]
}

fn default_candidates() -> usize {
    10
}

fn default_per_band() -> usize {
    4
}

fn default_bands() -> Vec<(f64, f64)> {
    DEFAULT_BANDS.to_vec()
}

fn default_backends() -> Vec<String> {
    vec!["json".to_string()]
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, OrchestratorError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        config.source = Some(text.to_string());
        config.check()?;
        Ok(config)
    }

    /// Reads a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, OrchestratorError> {
        let text = fs::read_to_string(path).map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        let mut config = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.knowledge, &mut p.initial, &mut p.output] {
            resolve(base, path);
        }
        for path in [&mut p.corpus, &mut self.llm.transcript, &mut self.llm.record, &mut self.trainer.profile].into_iter().flatten() {
            resolve(base, path);
        }
    }

    pub fn check(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Config(m.to_string()));
        if self.n == 0 {
            return bad("n must be >= 1");
        }
        if self.max_retry == 0 {
            return bad("max_retry must be >= 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.candidates == 0 || self.per_band == 0 {
            return bad("candidates and per_band must be >= 1");
        }
        if self.selection.bfs_period == 0 || self.selection.max_children == 0 {
            return bad("selection values must be >= 1");
        }
        if !self.backends.iter().any(|b| b == "json") {
            return bad("backends must include json");
        }
        if self.llm.kind == LlmKind::Replay && self.llm.transcript.is_none() {
            return bad("the replay client needs llm.transcript");
        }
        if self.trainer.kind == TrainerKind::Command && self.trainer.command.is_empty() {
            return bad("the command trainer needs trainer.command");
        }
        check_bands(&self.bands).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        self.macro_config.check().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn max_iterations(&self) -> u64 {
        self.max_iterations.unwrap_or(10 * u64::from(self.n))
    }

    /// The document to snapshot into the run directory.
    pub fn snapshot(&self) -> String {
        self.source.clone().unwrap_or_else(|| toml::to_string(self).expect("config serializes"))
    }
}

pub fn build_llm(config: &LlmConfig) -> Result<Box<dyn LlmClient>, OrchestratorError> {
    let client: Box<dyn LlmClient> = match config.kind {
        LlmKind::Replay => {
            let path = config.transcript.as_ref().ok_or_else(|| OrchestratorError::Config("llm.transcript is required".into()))?;
            Box::new(ReplayClient::from_path(path)?)
        }
        LlmKind::Remote => {
            let mut client = RemoteClient::from_env(&config.endpoint, &config.model, &config.api_key_var)?;
            if let Some(t) = config.temperature {
                client = client.with_temperature(t);
            }
            Box::new(client)
        }
        LlmKind::Scripted => Box::new(ScriptedClient::new()),
    };
    match &config.record {
        Some(path) => Ok(Box::new(RecordingClient::new(client, path)?)),
        None => Ok(client),
    }
}

pub fn build_embedder(config: &EmbeddingConfig) -> Result<Box<dyn EmbeddingProvider>, OrchestratorError> {
    match config.kind {
        EmbeddingKind::Hashing => Ok(Box::new(HashingEmbedder::new(config.dim.max(1)))),
        EmbeddingKind::Remote => Ok(Box::new(RemoteEmbedder::from_env(&config.endpoint, &config.model, config.dim, &config.api_key_var)?)),
    }
}

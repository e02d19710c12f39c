//! The design loop: select, propose, modify, verify, train, record; then reflect.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{build_embedder, build_llm, RunConfig, TrainerKind};
use super::trainer::{train_seeds, CommandTrainer, StubTrainer, Trainer};
use super::{account_usage, OrchestratorError};
use crate::agents::{
    modifier_companion_blocks, modifier_dialogue, proposer_rank, AgentError, LlmClient, LlmError, ModifyRequest, Proposal,
    Usage,
};
use crate::codegen::{assemble_at_best, BackendRegistry, NetworkGraph};
use crate::dsl::{parse_block, Block};
use crate::graphops::{block_digest, BlockDigest};
use crate::history::{HistoryEntry, HistoryLog, Verdict};
use crate::knowledge::{
    reflect_history, retrieve_experience, retrieve_inspirations, AdviceKind, EmbeddingProvider, KnowledgeError,
    ReflectionReport, Retrieved, VectorStore,
};
use crate::modtree::{ArchSet, ModTree, NodeId, TrainOutcome, TreeNode};
use crate::validate::{validate_role, Role};

pub const CHECKPOINT_VERSION: u32 = 1;

/// The model, embedder and trainer a run talks to.
pub struct Services<'a> {
    pub llm: &'a dyn LlmClient,
    pub embedder: &'a dyn EmbeddingProvider,
    pub trainer: &'a dyn Trainer,
}

/// Test hooks.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunHooks {
    /// Stop with [`OrchestratorError::Aborted`] once this iteration is checkpointed.
    pub abort_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub best: NodeId,
    pub tree: ModTree,
    pub history: HistoryLog,
    /// Architectures trained beyond the root.
    pub trained: u32,
    pub iterations: u64,
    /// `trained` reached `n` before the iteration guard.
    pub completed: bool,
    pub reflection: ReflectionReport,
    pub usage: Usage,
    pub cost: f64,
}

/// Files of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> RunDir {
        RunDir { root: root.to_path_buf() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn tree(&self) -> PathBuf {
        self.root.join("tree.json")
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("history.jsonl")
    }

    pub fn experience(&self) -> PathBuf {
        self.root.join("experience.jsonl")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn arch(&self, name: &str) -> PathBuf {
        self.root.join("archs").join(name)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    next_iteration: u64,
    trained: u32,
    history_len: usize,
    clock: u64,
    tree: serde_json::Value,
    cursor: Option<serde_json::Value>,
}

struct State {
    tree: ModTree,
    history: HistoryLog,
    next_iteration: u64,
    trained: u32,
    clock: u64,
}

impl State {
    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }
}

/// Reads `cell.txt`, `stem.txt` and `downsample.txt` and validates each for its role.
pub fn load_arch(dir: &Path) -> Result<ArchSet, OrchestratorError> {
    let read = |name: &str, role: Role| -> Result<Block, OrchestratorError> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| OrchestratorError::InvalidInitial(format!("{}: {e}", path.display())))?;
        let block = parse_block(&text).map_err(|e| OrchestratorError::InvalidInitial(format!("{}: {e}", path.display())))?;
        let report = validate_role(&block, role);
        if !report.is_success() {
            return Err(OrchestratorError::InvalidInitial(format!("{}: {}", path.display(), report.context())));
        }
        Ok(block)
    };
    Ok(ArchSet { cell: read("cell.txt", Role::Cell)?, stem: read("stem.txt", Role::Stem)?, downsample: read("downsample.txt", Role::Downsample)? })
}

fn write_arch(dir: &Path, arch: &ArchSet, net: &NetworkGraph, backends: &[String]) -> Result<PathBuf, OrchestratorError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("cell.txt"), arch.cell.print() + "\n")?;
    fs::write(dir.join("stem.txt"), arch.stem.print() + "\n")?;
    fs::write(dir.join("downsample.txt"), arch.downsample.print() + "\n")?;
    let registry = BackendRegistry::default();
    for backend in backends {
        for file in registry.emit(net, backend)? {
            fs::write(dir.join(&file.path), &file.bytes)?;
        }
    }
    Ok(dir.join("network.json"))
}

/// Why an iteration stopped early.
enum Stop {
    Verdict(Verdict),
    Fatal(OrchestratorError),
}

impl From<AgentError> for Stop {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Llm(e @ (LlmError::ReplayMiss { .. } | LlmError::ReplayExhausted { .. })) => {
                Stop::Fatal(OrchestratorError::Llm(e))
            }
            other => Stop::Verdict(Verdict::AgentFailure { message: other.to_string() }),
        }
    }
}

impl From<KnowledgeError> for Stop {
    fn from(e: KnowledgeError) -> Self {
        match e {
            KnowledgeError::Agent(a) => a.into(),
            other => Stop::Verdict(Verdict::AgentFailure { message: other.to_string() }),
        }
    }
}

impl From<std::io::Error> for Stop {
    fn from(e: std::io::Error) -> Self {
        Stop::Fatal(e.into())
    }
}

struct Run<'a> {
    config: &'a RunConfig,
    services: &'a Services<'a>,
    dir: RunDir,
    knowledge: VectorStore,
    experience: VectorStore,
}

impl Run<'_> {
    fn iterate(&self, state: &mut State, iteration: u64) -> Result<HistoryEntry, OrchestratorError> {
        let started = state.tick();
        let candidate = state.tree.select_candidate(self.config.selection, iteration)?;
        let node = state.tree.node(candidate).expect("selected node exists").clone();
        let mut entry = HistoryEntry {
            iteration,
            proposal: Proposal { candidate, suggestion: String::new(), source: String::new() },
            parent_accuracy: node.accuracy,
            dialogue: None,
            attempts: Vec::new(),
            companion_attempts: Vec::new(),
            verdict: Verdict::InvalidBlock,
            block: None,
            digest: None,
            accuracy: None,
            test_accuracy: None,
            started,
            finished: 0,
            usage: Usage::default(),
        };
        entry.verdict = match self.step(state, &node, &mut entry) {
            Ok(verdict) | Err(Stop::Verdict(verdict)) => verdict,
            Err(Stop::Fatal(e)) => return Err(e),
        };
        entry.finished = state.tick();
        Ok(entry)
    }

    fn step(&self, state: &mut State, node: &TreeNode, entry: &mut HistoryEntry) -> Result<Verdict, Stop> {
        let (config, llm, embedder) = (self.config, self.services.llm, self.services.embedder);
        let base = &node.arch.cell;

        let mut tries: BTreeMap<&str, usize> = BTreeMap::new();
        for e in state.history.entries().iter().filter(|e| e.proposal.candidate == node.id) {
            *tries.entry(e.proposal.source.as_str()).or_default() += 1;
        }
        let count = |r: &Retrieved| tries.get(r.item.id.as_str()).copied().unwrap_or(0);
        // Per band, the least-tried items first; then only those tried least often overall.
        let all = retrieve_inspirations(&self.knowledge, embedder, &base.print(), usize::MAX, &config.bands)?;
        let mut offered: Vec<&Retrieved> = Vec::new();
        for band in 0..config.bands.len() {
            let mut members: Vec<&Retrieved> = all.iter().filter(|r| r.band == band).collect();
            members.sort_by_key(|r| count(r));
            offered.extend(members.into_iter().take(config.per_band));
        }
        let least = offered.iter().map(|r| count(r)).min().unwrap_or(0);
        let candidates: Vec<&Retrieved> = offered.into_iter().filter(|r| count(r) == least).take(config.candidates).collect();
        if candidates.is_empty() {
            return Ok(Verdict::AgentFailure { message: "no inspiration falls in the similarity bands".into() });
        }
        let listing: Vec<(usize, &str)> = candidates.iter().enumerate().map(|(i, r)| (i + 1, r.item.text.as_str())).collect();
        let ranking = proposer_rank(base, &listing, llm)?;
        entry.usage += ranking.usage;
        let chosen = &candidates[ranking.order[0] - 1].item;
        entry.proposal.suggestion = chosen.text.clone();
        entry.proposal.source = chosen.id.clone();

        let experiences = retrieve_experience(&self.experience, embedder, &chosen.text)?;
        let advice = |kind: AdviceKind| -> Vec<String> {
            experiences.iter().filter(|r| r.kind == kind).map(|r| r.advice.clone()).collect()
        };
        let (tips, suggestions) = (advice(AdviceKind::Tip), advice(AdviceKind::Suggestion));
        let modified = modifier_dialogue(
            &ModifyRequest {
                base,
                suggestion: &chosen.text,
                correctness_advice: &tips,
                performance_advice: &suggestions,
                role: Role::Cell,
                max_retry: config.max_retry,
                bindings: &[],
            },
            llm,
        )?;
        entry.usage += modified.dialogue.usage;
        entry.attempts = modified.attempts;
        entry.dialogue = Some(modified.dialogue);
        let Some(cell) = modified.block else {
            return Ok(Verdict::InvalidBlock);
        };
        let digest = block_digest(&cell).map_err(|e| Stop::Verdict(Verdict::Infeasible { reason: e.to_string() }))?;
        entry.block = Some(cell.clone());
        entry.digest = Some(digest);
        if let Some(of) = state.tree.find_duplicate(&digest) {
            return Ok(Verdict::Duplicate { of });
        }

        let companions = modifier_companion_blocks(&cell, std::slice::from_ref(&node.arch), llm, config.max_retry)?;
        entry.usage += companions.dialogue.usage;
        entry.companion_attempts = companions.attempts;
        let Some((stem, downsample)) = companions.blocks else {
            return Ok(Verdict::CompanionFailed);
        };
        let arch = ArchSet { cell, stem, downsample };
        let (net, _) = assemble_at_best(&arch.cell, &arch.stem, &arch.downsample, &config.macro_config)
            .map_err(|e| Stop::Verdict(Verdict::Infeasible { reason: e.to_string() }))?;
        let network = write_arch(&self.dir.arch(&format!("iter-{:04}", entry.iteration)), &arch, &net, &config.backends)
            .map_err(Stop::Fatal)?;
        let (outcome, reason) = match train_seeds(self.services.trainer, &network, &digest, &config.seeds) {
            Ok(result) => result,
            Err(e) => (TrainOutcome::FailedTraining, Some(e.to_string())),
        };
        let added = state
            .tree
            .add_result(node.id, &entry.proposal.suggestion, arch, digest, outcome)
            .map_err(|e| Stop::Fatal(e.into()))?;
        Ok(match outcome {
            TrainOutcome::Trained { accuracy_val, accuracy_test } => {
                entry.accuracy = Some(accuracy_val);
                entry.test_accuracy = Some(accuracy_test);
                Verdict::Trained { node: added.id }
            }
            _ => Verdict::TrainingFailed { node: added.id, reason: reason.unwrap_or_default() },
        })
    }

    fn checkpoint(&self, state: &State) -> Result<(), OrchestratorError> {
        let tree_json = state.tree.to_json();
        write_atomic(&self.dir.tree(), tree_json.as_bytes())?;
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            next_iteration: state.next_iteration,
            trained: state.trained,
            history_len: state.history.len(),
            clock: state.clock,
            tree: serde_json::from_str(&tree_json).expect("tree JSON parses"),
            cursor: self.services.llm.cursor(),
        };
        let text = serde_json::to_string_pretty(&checkpoint).expect("checkpoint serializes");
        write_atomic(&self.dir.checkpoint(), text.as_bytes())?;
        Ok(())
    }

    fn initial_state(&self) -> Result<State, OrchestratorError> {
        let arch = load_arch(&self.config.paths.initial)?;
        let digest: BlockDigest = block_digest(&arch.cell).map_err(|e| OrchestratorError::InvalidInitial(e.to_string()))?;
        let (net, _) = assemble_at_best(&arch.cell, &arch.stem, &arch.downsample, &self.config.macro_config)?;
        let network = write_arch(&self.dir.arch("root"), &arch, &net, &self.config.backends)?;
        let (outcome, reason) = train_seeds(self.services.trainer, &network, &digest, &self.config.seeds)?;
        if !matches!(outcome, TrainOutcome::Trained { .. }) {
            return Err(OrchestratorError::InvalidInitial(format!("base network failed training: {}", reason.unwrap_or_default())));
        }
        Ok(State { tree: ModTree::new(arch, digest, outcome)?, history: HistoryLog::new(), next_iteration: 1, trained: 0, clock: 0 })
    }

    fn resume_state(&self) -> Result<Option<State>, OrchestratorError> {
        let text = match fs::read_to_string(self.dir.checkpoint()) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| OrchestratorError::Checkpoint(e.to_string()))?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(OrchestratorError::Checkpoint(format!("unsupported version {}", checkpoint.version)));
        }
        let tree = ModTree::from_json(&checkpoint.tree.to_string())?;
        let mut history = HistoryLog::load(&self.dir.history())?;
        if history.len() < checkpoint.history_len {
            return Err(OrchestratorError::Checkpoint(format!(
                "history has {} entries, checkpoint expects {}",
                history.len(),
                checkpoint.history_len
            )));
        }
        history.truncate(checkpoint.history_len);
        history.save(&self.dir.history())?;
        if let Some(cursor) = &checkpoint.cursor {
            self.services.llm.restore_cursor(cursor)?;
        }
        log::info!("resuming at iteration {} with {} trained", checkpoint.next_iteration, checkpoint.trained);
        Ok(Some(State {
            tree,
            history,
            next_iteration: checkpoint.next_iteration,
            trained: checkpoint.trained,
            clock: checkpoint.clock,
        }))
    }
}

/// Runs the design loop, resuming from the run directory's checkpoint when one exists.
pub fn run_design(config: &RunConfig, services: &Services<'_>, hooks: &RunHooks) -> Result<RunOutcome, OrchestratorError> {
    config.check()?;
    let dir = RunDir::new(&config.paths.output);
    fs::create_dir_all(&dir.root)?;
    let dim = services.embedder.dimension();
    let knowledge = VectorStore::load(&config.paths.knowledge, dim)?;
    if knowledge.is_empty() {
        return Err(OrchestratorError::Config(format!(
            "knowledge store {} is empty; ingest a corpus first",
            config.paths.knowledge.display()
        )));
    }
    let experience = VectorStore::load(&dir.experience(), dim)?;
    let mut run = Run { config, services, dir, knowledge, experience };

    let mut state = match run.resume_state()? {
        Some(state) => state,
        None => {
            write_atomic(&run.dir.config(), config.snapshot().as_bytes())?;
            HistoryLog::new().save(&run.dir.history())?;
            let state = run.initial_state()?;
            run.checkpoint(&state)?;
            state
        }
    };

    let limit = config.max_iterations();
    while state.trained < config.n && state.next_iteration <= limit {
        let iteration = state.next_iteration;
        let entry = run.iterate(&mut state, iteration)?;
        log::info!("iteration {iteration}: {:?}", entry.verdict);
        if matches!(entry.verdict, Verdict::Trained { .. }) {
            state.trained += 1;
        }
        HistoryLog::append_to(&run.dir.history(), &entry)?;
        state.history.push(entry);
        state.next_iteration += 1;
        run.checkpoint(&state)?;
        if hooks.abort_after == Some(iteration) {
            return Err(OrchestratorError::Aborted { iteration });
        }
    }

    let reflection = reflect_history(&state.history, &state.tree, services.llm, services.embedder, &mut run.experience);
    run.experience.save(&run.dir.experience())?;
    run.checkpoint(&state)?;

    let mut usage = state.history.usage();
    usage += reflection.usage;
    let cost = account_usage(usage, &config.prices);
    let best = state.tree.best()?;
    let outcome = RunOutcome {
        best,
        completed: state.trained >= config.n,
        trained: state.trained,
        iterations: state.next_iteration - 1,
        tree: state.tree,
        history: state.history,
        reflection,
        usage,
        cost,
    };
    write_atomic(&run.dir.summary(), summary_json(&outcome).as_bytes())?;
    Ok(outcome)
}

fn summary_json(outcome: &RunOutcome) -> String {
    let best = outcome.tree.node(outcome.best).expect("best exists");
    let summary = serde_json::json!({
        "best": outcome.best.to_string(),
        "best_accuracy_val": best.accuracy,
        "best_accuracy_test": best.test_accuracy,
        "trained": outcome.trained,
        "iterations": outcome.iterations,
        "completed": outcome.completed,
        "tree_nodes": outcome.tree.len(),
        "experience_added": outcome.reflection.added,
        "usage": outcome.usage,
        "cost": (outcome.cost * 1e6).round() / 1e6,
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    text
}

/// Builds the services the config names and runs the loop.
pub fn run_design_from_config(config: &RunConfig, hooks: &RunHooks) -> Result<RunOutcome, OrchestratorError> {
    let llm = build_llm(&config.llm)?;
    let embedder = build_embedder(&config.embedding)?;
    let trainer: Box<dyn Trainer> = match config.trainer.kind {
        TrainerKind::Stub => Box::new(StubTrainer::default()),
        TrainerKind::Command => {
            Box::new(CommandTrainer { command: config.trainer.command.clone(), profile: config.trainer.profile.clone() })
        }
    };
    let services = Services { llm: llm.as_ref(), embedder: embedder.as_ref(), trainer: trainer.as_ref() };
    run_design(config, &services, hooks)
}

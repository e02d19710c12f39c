use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use archforge::knowledge::{ingest_corpus, VectorStore};
use archforge::orchestrator::{
    account_usage, build_embedder, build_llm, run_benchmark, run_design_from_config, BenchSample, ExpectOpsJudge, LlmKind,
    OrchestratorError, Prices, RunConfig, RunDir, RunHooks,
};
use archforge::{parse_block, validate_role, ModTree, Role};

#[derive(Parser)]
#[command(name = "archforge", version, about = "LLM-driven design of neural network blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a paper corpus into the knowledge store.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `paths.corpus`.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run the design loop, resuming from a checkpoint in the output directory.
    Design {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `paths.output`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Kill the process right after this iteration is checkpointed.
        #[arg(long, hide = true)]
        abort_after: Option<u64>,
    },
    /// Score block modifications on a sample file (JSON array).
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        /// Write the metrics here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Price a token count.
    Cost {
        #[arg(long)]
        input_tokens: u64,
        #[arg(long)]
        output_tokens: u64,
        #[arg(long, default_value_t = 2.5)]
        input_price: f64,
        #[arg(long, default_value_t = 10.0)]
        output_price: f64,
    },
    /// Validate a block file for a role.
    Validate {
        file: PathBuf,
        #[arg(long, default_value = "cell")]
        role: Role,
    },
    Tree {
        #[command(subcommand)]
        command: TreeCommand,
    },
    Replay {
        #[command(subcommand)]
        command: ReplayCommand,
    },
}

#[derive(Subcommand)]
enum TreeCommand {
    /// Print a run's modification tree as GraphViz.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReplayCommand {
    /// Re-run a recorded design run from its transcript and compare the outputs byte for byte.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// The run directory to compare against.
        #[arg(long)]
        run: PathBuf,
    },
}

const COMPARED: [&str; 5] = ["tree.json", "history.jsonl", "experience.jsonl", "summary.json", "checkpoint.json"];

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ingest(config: &Path, corpus: Option<PathBuf>) -> Result<()> {
    let config = RunConfig::load(config)?;
    let corpus = corpus.or(config.paths.corpus.clone()).context("no corpus directory (paths.corpus or --corpus)")?;
    let llm = build_llm(&config.llm)?;
    let embedder = build_embedder(&config.embedding)?;
    let mut store = VectorStore::load(&config.paths.knowledge, embedder.dimension())?;
    let report = ingest_corpus(&corpus, llm.as_ref(), embedder.as_ref(), &mut store)?;
    if let Some(parent) = config.paths.knowledge.parent() {
        fs::create_dir_all(parent)?;
    }
    store.save(&config.paths.knowledge)?;
    println!(
        "papers {} skipped {} irrelevant {} failed {} items added {} (store {})",
        report.papers,
        report.skipped.len(),
        report.irrelevant.len(),
        report.failures.len(),
        report.items_added,
        store.len()
    );
    for (id, reason) in &report.failures {
        log::warn!("{id}: {reason}");
    }
    Ok(())
}

fn design(config: &Path, output: Option<PathBuf>, abort_after: Option<u64>) -> Result<()> {
    let mut config = RunConfig::load(config)?;
    if let Some(output) = output {
        config.paths.output = output;
    }
    match run_design_from_config(&config, &RunHooks { abort_after }) {
        Ok(outcome) => {
            let best = outcome.tree.node(outcome.best).expect("best node exists");
            println!(
                "trained {} in {} iterations; best {} val {:.4} test {:.4}; cost {:.4}",
                outcome.trained,
                outcome.iterations,
                outcome.best,
                best.accuracy.unwrap_or(0.0),
                best.test_accuracy.unwrap_or(0.0),
                outcome.cost
            );
            if !outcome.completed {
                log::warn!("iteration limit reached before {} architectures were trained", config.n);
            }
            Ok(())
        }
        Err(OrchestratorError::Aborted { iteration }) => {
            eprintln!("aborting after iteration {iteration}");
            std::process::abort()
        }
        Err(e) => Err(e.into()),
    }
}

fn bench(config: &Path, samples: &Path, out: Option<PathBuf>) -> Result<()> {
    let config = RunConfig::load(config)?;
    let text = fs::read_to_string(samples).with_context(|| format!("reading {}", samples.display()))?;
    let samples: Vec<BenchSample> = serde_json::from_str(&text).context("parsing samples")?;
    if samples.is_empty() {
        bail!("no samples");
    }
    let llm = build_llm(&config.llm)?;
    let metrics = run_benchmark(&samples, llm.as_ref(), &ExpectOpsJudge, config.max_retry, &config.prices);
    eprintln!(
        "E {:.3} Q {:.3}{} SR {:.3} tokens {:.1}K ± {:.1}K",
        metrics.e,
        metrics.q,
        if metrics.q_defined { "" } else { " (undefined)" },
        metrics.sr,
        metrics.tokens_mean_k,
        metrics.tokens_std_k
    );
    write_or_print(out.as_deref(), &(serde_json::to_string_pretty(&metrics)? + "\n"))
}

fn validate(file: &Path, role: Role) -> Result<bool> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let block = match parse_block(&text) {
        Ok(block) => block,
        Err(e) => {
            println!("{}", serde_json::json!({ "status": "error", "context": e.to_string() }));
            return Ok(false);
        }
    };
    let report = validate_role(&block, role);
    println!("{}", report.feedback_json());
    Ok(report.is_success())
}

fn replay_verify(config: &Path, run: &Path) -> Result<bool> {
    let mut config = RunConfig::load(config)?;
    if config.llm.kind != LlmKind::Replay {
        bail!("replay verify needs llm.kind = \"replay\"");
    }
    config.llm.record = None;
    let scratch = tempfile::tempdir()?;
    config.paths.output = scratch.path().join("run");
    run_design_from_config(&config, &RunHooks::default())?;
    let (fresh, recorded) = (RunDir::new(&config.paths.output), RunDir::new(run));
    let mut same = true;
    for name in COMPARED {
        let a = fs::read(fresh.root.join(name)).with_context(|| format!("replayed {name}"))?;
        let b = fs::read(recorded.root.join(name)).with_context(|| format!("recorded {name}"))?;
        let verdict = if a == b { "identical" } else { "DIFFERS" };
        same &= a == b;
        println!("{name}: {verdict}");
    }
    Ok(same)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest { config, corpus } => ingest(&config, corpus)?,
        Command::Design { config, output, abort_after } => design(&config, output, abort_after)?,
        Command::Bench { config, samples, out } => bench(&config, &samples, out)?,
        Command::Cost { input_tokens, output_tokens, input_price, output_price } => {
            let usage = archforge::agents::Usage { calls: 0, input_tokens, output_tokens };
            let prices = Prices { input_per_million: input_price, output_per_million: output_price };
            println!("{:.4}", account_usage(usage, &prices));
        }
        Command::Validate { file, role } => return validate(&file, role),
        Command::Tree { command: TreeCommand::Export { run, out } } => {
            let path = RunDir::new(&run).tree();
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let tree = ModTree::from_json(&text)?;
            write_or_print(out.as_deref(), &tree.to_dot())?;
        }
        Command::Replay { command: ReplayCommand::Verify { config, run } } => return replay_verify(&config, &run),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use archforge::agents::{LlmClient, ReplayClient};
use archforge::knowledge::{ingest_corpus, HashingEmbedder, VectorStore};
use archforge::orchestrator::{run_design, RunConfig, RunHooks, RunOutcome, Services, StubTrainer};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// The fixture config with the knowledge store and run directory moved under `dir`.
pub fn fixture_config(dir: &Path) -> RunConfig {
    let mut config = RunConfig::load(&fixtures().join("design.toml")).unwrap();
    config.paths.knowledge = dir.join("knowledge.jsonl");
    config.paths.output = dir.join("run");
    config
}

pub fn ingest(config: &RunConfig, llm: &dyn LlmClient) {
    let embedder = HashingEmbedder::new(config.embedding.dim);
    let mut store = VectorStore::load(&config.paths.knowledge, config.embedding.dim).unwrap();
    ingest_corpus(config.paths.corpus.as_ref().unwrap(), llm, &embedder, &mut store).unwrap();
    store.save(&config.paths.knowledge).unwrap();
}

pub fn replay_client() -> ReplayClient {
    ReplayClient::from_path(&fixtures().join("transcript.jsonl")).unwrap()
}

pub fn design(config: &RunConfig, llm: &dyn LlmClient, hooks: &RunHooks) -> Result<RunOutcome, archforge::orchestrator::OrchestratorError> {
    let embedder = HashingEmbedder::new(config.embedding.dim);
    let trainer = StubTrainer::default();
    run_design(config, &Services { llm, embedder: &embedder, trainer: &trainer }, hooks)
}

/// A corpus directory under `dir` holding only the named fixture papers.
pub fn sub_corpus(dir: &Path, ids: &[&str]) -> PathBuf {
    let corpus = dir.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    for id in ids {
        for ext in ["meta.json", "body.txt"] {
            let name = format!("{id}.{ext}");
            std::fs::copy(fixtures().join("corpus").join(&name), corpus.join(&name)).unwrap();
        }
    }
    corpus
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub const RUN_FILES: [&str; 6] =
    ["config.toml", "tree.json", "history.jsonl", "experience.jsonl", "summary.json", "checkpoint.json"];

pub mod gen {
    use std::collections::{BTreeMap, BTreeSet};

    use archforge::dsl::{BinOp, Block, Expr, OpInstance, OpKind, Var, CATALOG};
    use rand::seq::SliceRandom;
    use rand::Rng;

    pub fn expr<R: Rng>(rng: &mut R, depth: u32) -> Expr {
        if depth == 0 || rng.gen_bool(0.55) {
            return if rng.gen_bool(0.5) {
                Expr::int(rng.gen_range(-2..=64))
            } else {
                Expr::var(*Var::ALL.choose(rng).unwrap())
            };
        }
        if rng.gen_bool(0.1) {
            return Expr::neg(expr(rng, depth - 1));
        }
        let op = *[BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div].choose(rng).unwrap();
        let rhs = if op == BinOp::Div { Expr::int(rng.gen_range(1..=8)) } else { expr(rng, depth - 1) };
        Expr::bin(op, expr(rng, depth - 1), rhs)
    }

    fn op<R: Rng>(rng: &mut R) -> OpInstance {
        if rng.gen_bool(0.03) {
            let raw = if rng.gen_bool(0.5) { Some("output_size=7".to_string()) } else { None };
            return OpInstance::unknown(*["ROIAlign", "DeformConv", "Swish"].choose(rng).unwrap(), raw);
        }
        let specs: Vec<_> = CATALOG.iter().filter(|s| !matches!(s.kind, OpKind::Input | OpKind::Output)).collect();
        let spec = specs.choose(rng).unwrap();
        let raw: Vec<(Option<String>, Expr)> = if spec.variadic {
            (0..rng.gen_range(1..=4)).map(|_| (None, expr(rng, 2))).collect()
        } else {
            let mut named = false;
            let mut raw = Vec::new();
            for p in spec.params {
                if p.default.is_some() && rng.gen_bool(0.5) {
                    named = true;
                    continue;
                }
                named |= rng.gen_bool(0.3);
                raw.push((named.then(|| p.name.to_string()), expr(rng, 2)));
            }
            raw
        };
        OpInstance::new(spec.kind, raw).expect("generated arguments are well formed")
    }

    /// A well-formed block: forward edges only, one input, one output, sparse node indices.
    pub fn block<R: Rng>(rng: &mut R, max_mid: usize) -> Block {
        let mid = rng.gen_range(1..=max_mid);
        let mut index = Vec::with_capacity(mid + 2);
        let mut next = rng.gen_range(0..3u32);
        for _ in 0..mid + 2 {
            index.push(next);
            next += rng.gen_range(1..=3);
        }
        let mut nodes = BTreeMap::new();
        let mut edges = BTreeSet::new();
        nodes.insert(index[0], OpInstance::simple(OpKind::Input));
        for k in 1..=mid {
            let instance = op(rng);
            let fan_in = match instance.kind().map(|k| k.spec().arity) {
                Some(archforge::dsl::Arity::AtLeastTwo) => rng.gen_range(2..=3),
                _ => 1,
            };
            for _ in 0..fan_in {
                edges.insert((index[rng.gen_range(0..k)], index[k]));
            }
            nodes.insert(index[k], instance);
        }
        nodes.insert(index[mid + 1], OpInstance::simple(OpKind::Output));
        edges.insert((index[mid], index[mid + 1]));
        let name = *["cell", "block", "stem", "downsample", "b-1.x"].choose(rng).unwrap();
        Block::from_parts(name, nodes, edges).unwrap()
    }

    /// Random graph over few labels so that many nodes look alike; may contain cycles.
    pub fn small_graph<R: Rng>(rng: &mut R, n: usize) -> Block {
        assert!(n >= 2);
        let labels = [
            OpInstance::simple(OpKind::ReLU),
            OpInstance::simple(OpKind::BN),
            OpInstance::simple(OpKind::Add),
            OpInstance::new(OpKind::Conv2d, vec![(None, Expr::var(Var::C)), (None, Expr::int(3))]).unwrap(),
        ];
        let palette = rng.gen_range(1..=labels.len());
        let mut nodes = BTreeMap::new();
        nodes.insert(0, OpInstance::simple(OpKind::Input));
        for i in 1..n - 1 {
            nodes.insert(i as u32, labels[rng.gen_range(0..palette)].clone());
        }
        nodes.insert((n - 1) as u32, OpInstance::simple(OpKind::Output));
        let density = rng.gen_range(0.1..0.5);
        let mut edges = BTreeSet::new();
        for a in 0..n as u32 {
            for b in 0..n as u32 {
                if a != b && (a < b || rng.gen_bool(0.15)) && rng.gen_bool(density) {
                    edges.insert((a, b));
                }
            }
        }
        Block::from_parts("g", nodes, edges).unwrap()
    }

    /// The same block with node indices shuffled onto a fresh index set.
    pub fn permuted<R: Rng>(rng: &mut R, block: &Block) -> Block {
        let old: Vec<u32> = block.nodes().map(|(i, _)| i).collect();
        let mut fresh: Vec<u32> = (0..old.len() as u32).map(|i| i * 2 + rng.gen_range(0..2)).collect();
        fresh.shuffle(rng);
        let map: BTreeMap<u32, u32> = old.iter().copied().zip(fresh).collect();
        let nodes = block.nodes().map(|(i, op)| (map[&i], op.clone())).collect();
        let edges = block.edges().map(|(a, b)| (map[&a], map[&b])).collect();
        Block::from_parts(block.name(), nodes, edges).unwrap()
    }

    /// Flips one edge between two non-io nodes, or adds one if there is none to flip.
    pub fn perturbed<R: Rng>(rng: &mut R, block: &Block) -> Block {
        let ids: Vec<u32> = block.nodes().map(|(i, _)| i).collect();
        let a = ids[rng.gen_range(0..ids.len())];
        let mut b = ids[rng.gen_range(0..ids.len())];
        if a == b {
            b = ids[(ids.iter().position(|x| *x == a).unwrap() + 1) % ids.len()];
        }
        let mut edges: BTreeSet<(u32, u32)> = block.edges().collect();
        if !edges.remove(&(a, b)) {
            edges.insert((a, b));
        }
        let nodes = block.nodes().map(|(i, op)| (i, op.clone())).collect();
        Block::from_parts(block.name(), nodes, edges).unwrap()
    }

    const NOISE: &[u8] = b"()->:#,=*/+- \n0123456789abcCWHdimReLUConv2doutput_size";

    /// Character-level damage to a block's text.
    pub fn mutate_text<R: Rng>(rng: &mut R, text: &str) -> String {
        let mut bytes = text.as_bytes().to_vec();
        for _ in 0..rng.gen_range(1..=4) {
            let at = rng.gen_range(0..=bytes.len());
            match rng.gen_range(0..6) {
                0 if at < bytes.len() => {
                    bytes.remove(at);
                }
                1 => bytes.insert(at, *NOISE.choose(rng).unwrap()),
                2 if at < bytes.len() => bytes[at] = *NOISE.choose(rng).unwrap(),
                3 => bytes.truncate(at),
                4 => {
                    let lines: Vec<&[u8]> = bytes.split(|c| *c == b'\n').collect();
                    let dup = lines[rng.gen_range(0..lines.len())].to_vec();
                    bytes.extend_from_slice(b"\n");
                    bytes.extend_from_slice(&dup);
                }
                _ => bytes.insert(at, rng.gen()),
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

pub mod oracle {
    /// Closed-form parameter and MAC counts for the fixture network (ResNet basic cell, one
    /// strided conv in stem and downsample) at `width`.
    pub fn resnet_resources(width: u64, config: &archforge::codegen::MacroConfig) -> (u64, u64) {
        let (cells, classes, cin) = (config.cells_per_stack as u64, config.num_classes as u64, config.input_channels as u64);
        let mut side = (config.resolution.0 as u64 / 2, config.resolution.1 as u64 / 2);
        let mut params = 9 * cin * width + 2 * width;
        let mut macs = 9 * cin * width * side.0 * side.1;
        let mut c = width;
        for stack in 0..config.stacks {
            if stack > 0 {
                side = (side.0 / 2, side.1 / 2);
                params += 9 * c * 2 * c + 4 * c;
                macs += 9 * c * 2 * c * side.0 * side.1;
                c *= 2;
            }
            params += cells * (2 * 9 * c * c + 2 * 2 * c);
            macs += cells * 2 * 9 * c * c * side.0 * side.1;
        }
        params += c * classes + classes;
        macs += c * classes;
        (params, macs)
    }

    use std::collections::BTreeSet;

    use archforge::dsl::Block;
    use archforge::graphops::node_label;

    /// Exhaustive search for a label- and edge-preserving bijection.
    pub fn isomorphic(a: &Block, b: &Block) -> bool {
        let na: Vec<(u32, String)> = a.nodes().map(|(i, op)| (i, node_label(op))).collect();
        let nb: Vec<(u32, String)> = b.nodes().map(|(i, op)| (i, node_label(op))).collect();
        if na.len() != nb.len() || a.edge_count() != b.edge_count() {
            return false;
        }
        let eb: BTreeSet<(u32, u32)> = b.edges().collect();
        let mut used = vec![false; nb.len()];
        let mut map = vec![0u32; na.len()];
        let pos = |i: u32| na.iter().position(|(x, _)| *x == i).unwrap();
        fn go(
            k: usize,
            na: &[(u32, String)],
            nb: &[(u32, String)],
            used: &mut [bool],
            map: &mut [u32],
            check: &dyn Fn(&[u32]) -> bool,
        ) -> bool {
            if k == na.len() {
                return check(map);
            }
            for j in 0..nb.len() {
                if !used[j] && nb[j].1 == na[k].1 {
                    used[j] = true;
                    map[k] = nb[j].0;
                    if go(k + 1, na, nb, used, map, check) {
                        return true;
                    }
                    used[j] = false;
                }
            }
            false
        }
        let check = |map: &[u32]| a.edges().all(|(s, d)| eb.contains(&(map[pos(s)], map[pos(d)])));
        go(0, &na, &nb, &mut used, &mut map, &check)
    }
}

#[derive(Debug, serde::Deserialize)]
pub struct ValidatorCase {
    pub name: String,
    pub role: archforge::Role,
    pub kind: archforge::validate::FindingKind,
    #[serde(default)]
    pub also: Vec<archforge::validate::FindingKind>,
    #[serde(default)]
    pub context: Option<String>,
    pub block: String,
}

pub fn validator_cases() -> Vec<ValidatorCase> {
    #[derive(serde::Deserialize)]
    struct File {
        case: Vec<ValidatorCase>,
    }
    let text = std::fs::read_to_string(fixtures().join("validator/cases.toml")).unwrap();
    toml::from_str::<File>(&text).unwrap().case
}

/// Empty when the case behaves; otherwise what went wrong.
pub fn check_validator_case(case: &ValidatorCase) -> Option<String> {
    use std::collections::BTreeSet;
    let block = match archforge::parse_block(&case.block) {
        Ok(b) => b,
        Err(e) => return Some(format!("parse error {e}")),
    };
    let report = archforge::validate_role(&block, case.role);
    let got: BTreeSet<_> = report.findings.iter().map(|f| f.kind).collect();
    let want: BTreeSet<_> = std::iter::once(case.kind).chain(case.also.iter().copied()).collect();
    if got != want {
        return Some(format!("expected {want:?}, got {got:?}: {}", report.context()));
    }
    if let Some(context) = &case.context {
        if &report.context() != context {
            return Some(format!("context {:?} != {context:?}", report.context()));
        }
    }
    None
}

/// The stored small blocks used as isomorphism fixtures, sorted by file name.
pub fn stored_iso_blocks() -> Vec<(String, archforge::Block)> {
    let mut files: Vec<_> = std::fs::read_dir(fixtures().join("iso")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, archforge::parse_block(&std::fs::read_to_string(&p).unwrap()).unwrap())
        })
        .collect()
}

/// Compares both library routes with the brute-force oracle; returns a description of each
/// disagreement.
pub fn iso_disagreements(a: &archforge::Block, b: &archforge::Block) -> Vec<String> {
    let truth = oracle::isomorphic(a, b);
    let mut out = Vec::new();
    let fast = archforge::is_isomorphic(a, b).unwrap();
    if fast != truth {
        out.push(format!("is_isomorphic={fast} oracle={truth}"));
    }
    let same_hash = archforge::block_digest(a).unwrap() == archforge::block_digest(b).unwrap();
    if same_hash != truth {
        out.push(format!("equal digests={same_hash} oracle={truth}"));
    }
    out
}

/// Seeded pairs: relabeled copies, one-edge perturbations and independent graphs.
pub fn random_iso_pairs(seed: u64, count: usize) -> Vec<(archforge::Block, archforge::Block)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.gen_range(2..=8);
            let a = gen::small_graph(&mut rng, n);
            let b = match i % 3 {
                0 => gen::permuted(&mut rng, &a),
                1 => {
                    let p = gen::perturbed(&mut rng, &a);
                    gen::permuted(&mut rng, &p)
                }
                _ => gen::small_graph(&mut rng, n),
            };
            (a, b)
        })
        .collect()
}

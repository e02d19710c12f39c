//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use archforge::agents::Usage;
use archforge::codegen::{assemble, count_resources, node_resources, search_width, MacroConfig};
use archforge::orchestrator::{account_usage, BenchMetrics, OrchestratorError, Prices, RunHooks, SampleResult};
use archforge::{parse_block, OpKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::gen;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn dsl_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1_000 {
        let b = gen::block(&mut rng, 14);
        let text = b.print();
        let back = parse_block(&text).map_err(|e| format!("block {i}: {e}"))?;
        ensure(back == b, format!("block {i} changed:\n{text}"))?;
    }
    let mut crashes = 0;
    for _ in 0..10_000 {
        let b = gen::block(&mut rng, 8);
        let text = gen::mutate_text(&mut rng, &b.print());
        if catch_unwind(|| parse_block(&text)).is_err() {
            crashes += 1;
        }
    }
    ensure(crashes == 0, format!("{crashes} parser panics on mutated text"))?;
    Ok("1000 round trips, 10000 mutated texts, 0 panics".into())
}

fn validator_corpus() -> Check {
    let cases = common::validator_cases();
    ensure(cases.len() >= 30, format!("only {} cases", cases.len()))?;
    let failures: Vec<String> = cases.iter().filter_map(common::check_validator_case).collect();
    ensure(failures.is_empty(), failures.join("; "))?;
    let roialign = cases.iter().any(|c| c.context.as_deref() == Some("node 8 error: Undefined computation ROIAlign is used"));
    ensure(roialign, "ROIAlign context case missing")?;
    Ok(format!("{} cases, each exactly its class", cases.len()))
}

fn isomorphism() -> Check {
    let stored = common::stored_iso_blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pairs = Vec::new();
    for (i, (_, a)) in stored.iter().enumerate() {
        for (_, b) in &stored[i..] {
            pairs.push((a.clone(), b.clone()));
        }
        pairs.push((a.clone(), gen::permuted(&mut rng, a)));
    }
    let stored_pairs = pairs.len();
    pairs.extend(common::random_iso_pairs(500, 500));
    let mut disagreements = 0;
    let mut positives = 0;
    for (a, b) in &pairs {
        disagreements += common::iso_disagreements(a, b).len();
        positives += common::oracle::isomorphic(a, b) as usize;
    }
    ensure(disagreements == 0, format!("{disagreements} disagreements"))?;
    Ok(format!("{stored_pairs} stored + 500 random pairs ({positives} isomorphic), 0 disagreements"))
}

fn resources() -> Check {
    let dir = common::fixtures().join("initial");
    let load = |name: &str| parse_block(&String::from_utf8(common::read(&dir.join(name))).unwrap()).unwrap();
    let (cell, stem, down) = (load("cell.txt"), load("stem.txt"), load("downsample.txt"));

    let wide = MacroConfig { resolution: (64, 64), ..MacroConfig::default() };
    let net = assemble(&cell, &stem, &down, &wide, 16).map_err(|e| e.to_string())?;
    let mut cell_params = 0;
    let mut conv_macs = Vec::new();
    for node in net.nodes.iter().filter(|n| n.section == "stack0-cell0") {
        let inputs: Vec<_> = node.inputs.iter().map(|&i| &net.nodes[i].shape).collect();
        let r = node_resources(node, &inputs, 1);
        cell_params += r.params;
        if node.op == OpKind::Conv2d {
            conv_macs.push(r.macs);
        }
    }
    let want_params = 2 * (3 * 3 * 16 * 16) + 2 * (2 * 16);
    ensure(cell_params == want_params && want_params == 4_672, format!("cell params {cell_params}"))?;
    let want_macs = 3 * 3 * 16 * 16 * 32 * 32;
    ensure(conv_macs == [want_macs; 2] && want_macs == 2_359_296, format!("conv MACs {conv_macs:?}"))?;

    let config = MacroConfig::default();
    ensure(config.max_params == 1_500_000 && config.max_macs == 200_000_000, "budgets")?;
    let found = search_width(&cell, &stem, &down, &config).map_err(|e| e.to_string())?;
    let fits = |w: i64| -> Result<bool, String> {
        let r = count_resources(&assemble(&cell, &stem, &down, &config, w).map_err(|e| e.to_string())?);
        Ok(r.params <= config.max_params && r.macs <= config.max_macs)
    };
    ensure(!found.capped, "width search hit the grid maximum")?;
    ensure(fits(found.width)? && !fits(found.width + 1)?, format!("boundary fails at w*={}", found.width))?;
    Ok(format!("cell 4672 params, conv 2359296 MACs, w*={} ({} params, {} MACs)", found.width, found.resources.params, found.resources.macs))
}

fn replayed_run() -> Check {
    let mut outputs = Vec::new();
    let mut dirs = Vec::new();
    for _ in 0..3 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = common::fixture_config(dir.path());
        common::ingest(&config, &common::replay_client());
        let out = common::design(&config, &common::replay_client(), &RunHooks::default()).map_err(|e| e.to_string())?;
        ensure(out.completed && out.trained == 3, format!("trained {} completed {}", out.trained, out.completed))?;
        ensure(out.tree.len() == 4, format!("tree has {} nodes", out.tree.len()))?;
        outputs.push(common::RUN_FILES.map(|f| common::read(&config.paths.output.join(f))));
        dirs.push(dir);
    }
    ensure(outputs.windows(2).all(|w| w[0] == w[1]), "runs differ")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::fixture_config(dir.path());
    common::ingest(&config, &common::replay_client());
    match common::design(&config, &common::replay_client(), &RunHooks { abort_after: Some(2) }) {
        Err(OrchestratorError::Aborted { iteration: 2 }) => {}
        other => return Err(format!("expected an abort after iteration 2, got {:?}", other.map(|o| o.iterations))),
    }
    common::design(&config, &common::replay_client(), &RunHooks::default()).map_err(|e| e.to_string())?;
    let resumed = common::RUN_FILES.map(|f| common::read(&config.paths.output.join(f)));
    ensure(resumed == outputs[0], "resumed run differs")?;
    Ok("4-node tree, 3 identical runs, identical after resume".into())
}

fn cost() -> Check {
    let usage = Usage { calls: 0, input_tokens: 5_371_000, output_tokens: 987_000 };
    let prices = Prices { input_per_million: 2.5, output_per_million: 10.0 };
    let got = account_usage(usage, &prices);
    let exact = 5.371 * 2.5 + 0.987 * 10.0;
    ensure((got - exact).abs() < 1e-9, format!("{got} vs {exact}"))?;
    ensure((got - 23.30).abs() <= 0.005, format!("${got:.4}"))?;
    Ok(format!("${got:.4}"))
}

fn metrics() -> Check {
    let results: Vec<SampleResult> = (0..10)
        .map(|i| SampleResult { id: format!("s{i}"), executable: i < 8, correct: i < 6, usage: Usage::default(), error: None })
        .collect();
    let m = BenchMetrics::from_results(results, &Prices::default());
    ensure((m.e, m.q, m.sr) == (0.8, 0.75, 0.6), format!("E {} Q {} SR {}", m.e, m.q, m.sr))?;
    Ok(format!("E={:.3} Q={:.3} SR={:.3}", m.e, m.q, m.sr))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("dsl round trip", dsl_round_trip, Duration::from_secs(60)),
        ("validator corpus", validator_corpus, Duration::from_secs(10)),
        ("isomorphism oracle", isomorphism, Duration::from_secs(120)),
        ("resource counting", resources, Duration::from_secs(30)),
        ("replayed design run", replayed_run, Duration::from_secs(30)),
        ("cost accounting", cost, Duration::from_secs(1)),
        ("benchmark metrics", metrics, Duration::from_secs(1)),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
            }
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

use std::hint::black_box;
use std::path::Path;

use archforge::codegen::{assemble, count_resources, search_width, MacroConfig};
use archforge::{canonical_hash, is_isomorphic, parse_block, validate_role, Block, Role};
use criterion::{criterion_group, criterion_main, Criterion};

fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn blocks() -> (Block, Block, Block) {
    let load = |name: &str| parse_block(&fixture(&format!("initial/{name}"))).unwrap();
    (load("cell.txt"), load("stem.txt"), load("downsample.txt"))
}

fn dsl(c: &mut Criterion) {
    let text = fixture("initial/cell.txt");
    let block = parse_block(&text).unwrap();
    c.bench_function("parse_block", |b| b.iter(|| parse_block(black_box(&text)).unwrap()));
    c.bench_function("print_block", |b| b.iter(|| black_box(&block).print()));
}

fn validation(c: &mut Criterion) {
    let (cell, stem, _) = blocks();
    c.bench_function("validate_cell", |b| b.iter(|| validate_role(black_box(&cell), Role::Cell)));
    c.bench_function("validate_stem", |b| b.iter(|| validate_role(black_box(&stem), Role::Stem)));
}

fn graphs(c: &mut Criterion) {
    let a = parse_block(&fixture("iso/resnet.txt")).unwrap();
    let renumbered = parse_block(&fixture("iso/resnet_renumbered.txt")).unwrap();
    let twins = parse_block(&fixture("iso/twin_branches.txt")).unwrap();
    let crossed = parse_block(&fixture("iso/twin_branches_crossed.txt")).unwrap();
    c.bench_function("canonical_hash", |b| b.iter(|| canonical_hash(black_box(&a)).unwrap()));
    c.bench_function("is_isomorphic_resnet", |b| b.iter(|| is_isomorphic(black_box(&a), black_box(&renumbered)).unwrap()));
    c.bench_function("is_isomorphic_symmetric", |b| b.iter(|| is_isomorphic(black_box(&twins), black_box(&crossed)).unwrap()));
}

fn resources(c: &mut Criterion) {
    let (cell, stem, down) = blocks();
    let config = MacroConfig::default();
    let net = assemble(&cell, &stem, &down, &config, 32).unwrap();
    c.bench_function("assemble", |b| b.iter(|| assemble(&cell, &stem, &down, &config, black_box(32)).unwrap()));
    c.bench_function("count_resources", |b| b.iter(|| count_resources(black_box(&net))));
    c.bench_function("search_width", |b| b.iter(|| search_width(&cell, &stem, &down, black_box(&config)).unwrap()));
}

criterion_group!(benches, dsl, validation, graphs, resources);
criterion_main!(benches);

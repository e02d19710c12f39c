mod common;

use archforge::codegen::{assemble, count_resources, node_resources, search_width, MacroConfig, NetworkGraph, ResourceCount};
use archforge::{parse_block, Block, OpKind};
use proptest::prelude::*;

fn fixture_blocks() -> (Block, Block, Block) {
    let dir = common::fixtures().join("initial");
    let load = |name: &str| parse_block(&String::from_utf8(common::read(&dir.join(name))).unwrap()).unwrap();
    (load("cell.txt"), load("stem.txt"), load("downsample.txt"))
}

fn section_total(net: &NetworkGraph, section: &str) -> ResourceCount {
    let mut total = ResourceCount::default();
    for node in net.nodes.iter().filter(|n| n.section == section) {
        let inputs: Vec<_> = node.inputs.iter().map(|&i| &net.nodes[i].shape).collect();
        total += node_resources(node, &inputs, net.macro_config.batch as u64);
    }
    total
}

/// Cells of the first stack run at 32x32 when the stem halves a 64x64 input.
fn net_with_32px_cells(width: i64) -> NetworkGraph {
    let (cell, stem, down) = fixture_blocks();
    let config = MacroConfig { resolution: (64, 64), ..MacroConfig::default() };
    assemble(&cell, &stem, &down, &config, width).unwrap()
}

#[test]
fn resnet_cell_at_sixteen_channels() {
    let net = net_with_32px_cells(16);
    let cell = section_total(&net, "stack0-cell0");
    assert_eq!(cell.params, 2 * (3 * 3 * 16 * 16) + 2 * (2 * 16));
    assert_eq!(cell.params, 4_672);
}

#[test]
fn single_conv_macs_at_32px() {
    let net = net_with_32px_cells(16);
    let convs: Vec<_> = net.nodes.iter().filter(|n| n.section == "stack0-cell0" && n.op == OpKind::Conv2d).collect();
    assert_eq!(convs.len(), 2);
    for conv in convs {
        let r = node_resources(conv, &[&net.nodes[conv.inputs[0]].shape], 1);
        assert_eq!(r.macs, 3 * 3 * 16 * 16 * 32 * 32);
        assert_eq!(r.macs, 2_359_296);
    }
}

#[test]
fn batch_does_not_change_per_sample_counts() {
    let (cell, stem, down) = fixture_blocks();
    let one = assemble(&cell, &stem, &down, &MacroConfig::default(), 24).unwrap();
    let four = assemble(&cell, &stem, &down, &MacroConfig { batch: 4, ..MacroConfig::default() }, 24).unwrap();
    assert_eq!(count_resources(&one), count_resources(&four));
}

#[test]
fn width_search_stops_at_the_budget_boundary() {
    let (cell, stem, down) = fixture_blocks();
    let config = MacroConfig::default();
    let found = search_width(&cell, &stem, &down, &config).unwrap();
    assert!(!found.capped);
    let fits = |w: i64| {
        let r = count_resources(&assemble(&cell, &stem, &down, &config, w).unwrap());
        r.params <= config.max_params && r.macs <= config.max_macs
    };
    assert!(fits(found.width));
    assert!(!fits(found.width + 1));

    let oracle_fits = |w: u64| {
        let (p, m) = common::oracle::resnet_resources(w, &config);
        p <= config.max_params && m <= config.max_macs
    };
    let oracle_best = (1..=config.grid.max as u64).filter(|w| oracle_fits(*w)).max().unwrap();
    assert_eq!(found.width as u64, oracle_best);
}

#[test]
fn tight_budget_is_infeasible() {
    let (cell, stem, down) = fixture_blocks();
    let config = MacroConfig { max_params: 1_000, ..MacroConfig::default() };
    assert!(search_width(&cell, &stem, &down, &config).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn network_counts_match_closed_form(width in 1i64..96, stacks in 1u32..4, cells in 1u32..4, classes in 2i64..20) {
        let (cell, stem, down) = fixture_blocks();
        let config = MacroConfig { stacks, cells_per_stack: cells, num_classes: classes, ..MacroConfig::default() };
        let net = assemble(&cell, &stem, &down, &config, width).unwrap();
        let got = count_resources(&net);
        prop_assert_eq!((got.params, got.macs), common::oracle::resnet_resources(width as u64, &config));
    }
}

mod common;

use std::collections::BTreeSet;

use archforge::validate::FindingKind;
use archforge::{parse_block, validate_role, Role};

#[test]
fn every_case_yields_exactly_its_class() {
    let cases = common::validator_cases();
    assert!(cases.len() >= 30);
    let failures: Vec<String> =
        cases.iter().filter_map(|c| common::check_validator_case(c).map(|why| format!("{}: {why}", c.name))).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn corpus_covers_the_required_classes() {
    let kinds: BTreeSet<FindingKind> = common::validator_cases().iter().map(|c| c.kind).collect();
    for k in [
        FindingKind::UndefinedOp,
        FindingKind::Cycle,
        FindingKind::DeadNode,
        FindingKind::OutputInputs,
        FindingKind::Broadcast,
        FindingKind::GroupsDivisibility,
        FindingKind::ReshapeCount,
        FindingKind::PermuteRank,
        FindingKind::ConcatMismatch,
        FindingKind::StemFactor,
        FindingKind::CellContract,
    ] {
        assert!(kinds.contains(&k), "{k:?} missing");
    }
}

#[test]
fn feedback_is_status_and_context_json() {
    let case = common::validator_cases().into_iter().find(|c| c.context.is_some()).unwrap();
    let report = validate_role(&parse_block(&case.block).unwrap(), case.role);
    let v: serde_json::Value = serde_json::from_str(&report.feedback_json()).unwrap();
    assert_eq!(v["status"], "error");
    assert_eq!(v["context"], case.context.unwrap().as_str());
}

#[test]
fn fixture_blocks_are_valid() {
    for (file, role) in [("cell.txt", Role::Cell), ("stem.txt", Role::Stem), ("downsample.txt", Role::Downsample)] {
        let text = std::fs::read_to_string(common::fixtures().join("initial").join(file)).unwrap();
        let report = validate_role(&parse_block(&text).unwrap(), role);
        assert!(report.is_success(), "{file}: {}", report.context());
        let v: serde_json::Value = serde_json::from_str(&report.feedback_json()).unwrap();
        assert_eq!(v["status"], "success");
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const RUN_FILES: [&str; 6] = ["config.toml", "tree.json", "history.jsonl", "experience.jsonl", "summary.json", "checkpoint.json"];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

fn archforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_archforge")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// The fixture design config with absolute fixture paths and the store under `dir`.
fn write_config(dir: &Path) -> PathBuf {
    let f = fixtures();
    let text = fs::read_to_string(f.join("design.toml"))
        .unwrap()
        .replace("\"transcript.jsonl\"", &format!("{:?}", f.join("transcript.jsonl")))
        .replace("corpus = \"corpus\"", &format!("corpus = {:?}", f.join("corpus")))
        .replace("initial = \"initial\"", &format!("initial = {:?}", f.join("initial")));
    let path = dir.join("design.toml");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn killed_run_resumes_to_the_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let ingest = archforge(&["ingest", "--config", s(&config)]);
    assert!(ingest.status.success(), "{}", String::from_utf8_lossy(&ingest.stderr));

    let whole = dir.path().join("whole");
    let out = archforge(&["design", "--config", s(&config), "--output", s(&whole)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("trained 3 in "));

    let split = dir.path().join("split");
    let killed = archforge(&["design", "--config", s(&config), "--output", s(&split), "--abort-after", "3"]);
    assert!(!killed.status.success());
    assert!(!split.join("summary.json").exists());
    let resumed = archforge(&["design", "--config", s(&config), "--output", s(&split)]);
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    for f in RUN_FILES {
        assert_eq!(fs::read(whole.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f}");
    }

    let verify = archforge(&["replay", "verify", "--config", s(&config), "--run", s(&whole)]);
    assert!(verify.status.success(), "{}", stdout(&verify));
    assert_eq!(stdout(&verify).matches(": identical").count(), 5);

    let dot = archforge(&["tree", "export", "--run", s(&whole)]);
    assert!(dot.status.success());
    assert!(stdout(&dot).starts_with("digraph"));
    assert_eq!(stdout(&dot).matches("->").count(), 3);
}

#[test]
fn replay_verify_reports_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    assert!(archforge(&["ingest", "--config", s(&config)]).status.success());
    let run = dir.path().join("run");
    assert!(archforge(&["design", "--config", s(&config), "--output", s(&run)]).status.success());
    fs::write(run.join("summary.json"), "{}\n").unwrap();
    let verify = archforge(&["replay", "verify", "--config", s(&config), "--run", s(&run)]);
    assert_eq!(verify.status.code(), Some(1));
    assert!(stdout(&verify).contains("summary.json: DIFFERS"));
}

#[test]
fn validate_exit_codes() {
    let ok = archforge(&["validate", s(&fixtures().join("initial/cell.txt"))]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("\"success\""));

    let stem = archforge(&["validate", "--role", "stem", s(&fixtures().join("initial/stem.txt"))]);
    assert_eq!(stem.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "##cell##\n0:input\n1:ROIAlign(7)\n2:output\n0->1\n1->2\n").unwrap();
    let out = archforge(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("Undefined computation ROIAlign is used"), "{}", stdout(&out));

    let missing = archforge(&["validate", s(&dir.path().join("absent.txt"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn cost_prints_dollars() {
    let out = archforge(&["cost", "--input-tokens", "5371000", "--output-tokens", "987000"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "23.2975");
}

#[test]
fn bench_scores_the_sample_file() {
    let f = fixtures();
    let out = archforge(&[
        "bench",
        "--config",
        s(&f.join("bench/bench.toml")),
        "--samples",
        s(&f.join("bench/samples.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!((m["samples"].as_u64(), m["executable"].as_u64(), m["correct"].as_u64()), (Some(10), Some(8), Some(6)));
    assert_eq!((m["e"].as_f64(), m["q"].as_f64(), m["sr"].as_f64()), (Some(0.8), Some(0.75), Some(0.6)));
}

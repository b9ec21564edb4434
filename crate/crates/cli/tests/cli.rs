use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn cqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqa-rank")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cqa(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["synth", "--threads", "30", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("config.json").to_str().unwrap().to_string()
}

#[test]
fn whole_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &["--signal", "centroid"]);
    let start = Instant::now();
    let stdout = ok(&["run-all", "-c", &cfg]);
    assert!(start.elapsed().as_secs() < 60);
    assert!(stdout.contains("MAP:"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("work/report.json")).unwrap()).unwrap();
    let map = report["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    let table = ok(&["ablate", "-c", &cfg]);
    assert!(table.lines().next().unwrap().starts_with("Feature Group"));
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), &["--seed", "3"]);
    synth(b.path(), &["--seed", "3"]);
    for f in ["synth.jsonl", "synth.unannotated.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn preprocess_keeps_line_count_including_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    let text = dir.path().join("synth.unannotated.txt");
    fs::write(&text, "Hello world, visit http://x.org\n\n42 apples!\n").unwrap();
    ok(&["preprocess", "-c", &cfg]);
    let tokens = fs::read_to_string(dir.path().join("work/unannotated.tokens.txt")).unwrap();
    assert_eq!(tokens.lines().count(), 3);
    fs::write(&text, "").unwrap();
    ok(&["preprocess", "-c", &cfg]);
    assert_eq!(fs::read_to_string(dir.path().join("work/unannotated.tokens.txt")).unwrap(), "");
}

#[test]
fn missing_config_exits_with_code_2() {
    let out = cqa(&["extract", "-c", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn predict_before_train_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    ok(&["extract", "-c", &cfg, "--set", "features.groups=[\"metadata\"]"]);
    let out = cqa(&["predict", "-c", &cfg, "--set", "features.groups=[\"metadata\"]"]);
    assert!(!out.status.success());
}

#[test]
fn grid_of_two_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    let first = ok(&["train-embeddings", "-c", &cfg, "--grid", "10:3:2:5,12:3:2:5"]);
    let files: Vec<_> = fs::read_dir(dir.path().join("work/embeddings")).unwrap().collect();
    assert_eq!(files.len(), 2);
    assert!(!first.contains("kept existing"), "{first}");
    let second = ok(&["train-embeddings", "-c", &cfg, "--grid", "10:3:2:5,12:3:2:5"]);
    assert_eq!(second.matches("kept existing").count(), 2, "{second}");
}

#[test]
fn bad_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    let out = cqa(&["extract", "-c", &cfg, "--set", "no_equals_sign"]);
    assert_eq!(out.status.code(), Some(2));
}

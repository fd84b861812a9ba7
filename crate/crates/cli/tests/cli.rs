use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cops(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cops"))
        .args(args)
        .env_remove("COPS_LLM_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cops(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset with ingest and memory already built.
fn prepared(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--out", s(&data), "--set", "synth.n_users=8", "--set", "synth.sessions_per_user=6"]);
    let cfg = data.join("cops.toml");
    ok(&["-c", s(&cfg), "ingest"]);
    ok(&["-c", s(&cfg), "build-memory", "--jobs", "2"]);
    cfg
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study/cops.toml")
}

#[test]
fn eval_writes_metrics_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared(dir.path());
    let out = dir.path().join("eval");
    let stdout = ok(&["-c", s(&cfg), "eval", "--out", s(&out)]);
    assert!(stdout.contains("| Model | Queries | MAP | MRR | P@1 | P-imp |"));
    for f in ["metrics.json", "metrics.md", "traces.jsonl", "queries.jsonl", "timing.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["main"]["pimp_version"], "pimp-v1");
    let labels: Vec<&str> = metrics["baselines"].as_array().unwrap().iter().map(|b| b["label"].as_str().unwrap()).collect();
    assert_eq!(labels, vec!["original", "p-click"]);
    let n = metrics["main"]["queries"].as_u64().unwrap();
    let split = metrics["repeated"]["queries"].as_u64().unwrap() + metrics["non_repeated"]["queries"].as_u64().unwrap();
    assert_eq!(n, split);
}

#[test]
fn run_ablate_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared(dir.path());
    let out = dir.path().join("o");
    ok(&["-c", s(&cfg), "run", "--out", s(&out)]);
    assert!(out.join("rankings.jsonl").exists());

    ok(&["-c", s(&cfg), "ablate", "--out", s(&out)]);
    let md = std::fs::read_to_string(out.join("ablation.md")).unwrap();
    let rows = md.lines().filter(|l| l.starts_with('|')).count();
    assert_eq!(rows, 2 + 5, "{md}");

    ok(&["-c", s(&cfg), "sweep", "--out", s(&out), "--set", "eval.fractions=[0.5, 1.0]"]);
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "fraction,map,mrr,p1,pimp");
    assert_eq!(lines.len(), 3);
}

#[test]
fn inputs_are_left_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared(dir.path());
    let data = cfg.parent().unwrap();
    let snapshot = |p: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = ["log.tsv", "corpus.jsonl", "mock_rules.json", "cops.toml"]
            .iter()
            .map(|f| (f.to_string(), std::fs::read(p.join(f)).unwrap()))
            .collect();
        v.sort();
        v
    };
    let before = snapshot(data);
    ok(&["-c", s(&cfg), "eval", "--out", s(&dir.path().join("x"))]);
    assert_eq!(before, snapshot(data));
}

#[test]
fn synth_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let small = ["--set", "synth.n_users=4"];
    ok(&[&["synth", "--out", s(&a), "--seed", "5"], &small[..]].concat());
    ok(&[&["synth", "--out", s(&b), "--seed", "5"], &small[..]].concat());
    ok(&[&["synth", "--out", s(&c), "--seed", "6"], &small[..]].concat());
    let read = |d: &Path| std::fs::read(d.join("log.tsv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    // usage: unknown flag, missing config, unknown key
    assert_eq!(cops(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(cops(&["-c", "/no/such.toml", "eval"]).status.code(), Some(1));
    assert_eq!(cops(&["eval", "--set", "pipeline.nope=1"]).status.code(), Some(1));
    let err = cops(&["-c", "/no/such.toml", "eval"]);
    let msg = String::from_utf8_lossy(&err.stderr);
    assert_eq!(msg.trim().lines().count(), 1, "{msg}");

    // data: a log that is mostly garbage
    let log = dir.path().join("bad.tsv");
    std::fs::write(&log, "not\ta\tlog\nstill not\n").unwrap();
    let o = cops(&["ingest", "--set", &format!("paths.log={}", s(&log)), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    // provider: HTTP with no endpoint
    let cfg = prepared(dir.path());
    let o = cops(&["-c", s(&cfg), "build-memory", "--set", "provider.kind=http", "--set", "paths.memory=/tmp/never"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn case_prints_the_trace_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let cfg = fixture();
    ok(&["-c", s(&cfg), "--out", out, "ingest"]);
    ok(&["-c", s(&cfg), "--out", out, "build-memory"]);
    let table = ok(&["-c", s(&cfg), "--out", out, "case", "--user", "beauty_user", "--query", "Maybelline new yorky"]);
    assert!(table.contains("Sensory Response       | No re-finding data found"), "{table}");
    assert!(table.contains("Top Documents          | gt,"), "{table}");
    let json = ok(&["-c", s(&cfg), "--out", out, "case", "--user", "beauty_user", "--query", "Maybelline new yorky", "--json"]);
    let trace: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(trace["rewritten_query"], "Maybelline New York make up");
    // unknown users are data errors
    let o = cops(&["-c", s(&cfg), "--out", out, "case", "--user", "nobody", "--query", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

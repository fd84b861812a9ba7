//! Acceptance checks, one line per criterion.
//!
//! Criteria listed in `EXPECTED_RED` are known to be unattainable as
//! stated. They are still run at full strength and reported as FAIL, but
//! only an unexpected failure (or an unexpected pass of a red one) makes
//! this target exit non-zero.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use cops_core::eval::{average_precision, p_at_1, p_improve, reciprocal_rank, split_repeated};
use cops_core::log::{parse_log, DocumentRef, TestQuery, UserHistory};
use cops_core::pipeline::QueryTrace;
use cops_core::ranking::{bm25_score, Bm25Params, CorpusStats, DocTerms};
use cops_core::synthgen::Manifest;

/// The hand-derived BM25 value does not follow from its own formula
/// (the derivation evaluates N - df + 0.5 as 1 instead of 0.5).
const EXPECTED_RED: &[u32] = &[3];

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- helpers

fn cops(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cops"))
        .args(args)
        .env_remove("COPS_LLM_ENDPOINT")
        .output()
        .map_err(|e| format!("cannot run cops: {e}"))?;
    if !out.status.success() {
        return Err(format!("cops {args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn json(path: &Path) -> Result<Value, String> {
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))
}

fn jsonl<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>, String> {
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

fn f64_at(v: &Value, ptr: &str) -> Result<f64, String> {
    v.pointer(ptr).and_then(Value::as_f64).ok_or_else(|| format!("missing number at {ptr}"))
}

fn u64_at(v: &Value, ptr: &str) -> Result<u64, String> {
    v.pointer(ptr).and_then(Value::as_u64).ok_or_else(|| format!("missing count at {ptr}"))
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("d{i}")).collect()
}

/// The synthetic dataset shared by the binary-driven criteria, with memory
/// built ahead of evaluation.
struct World {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: PathBuf,
    /// `eval --jobs 4` output and its wall time.
    eval_a: Option<(PathBuf, Duration)>,
}

impl World {
    fn prepare() -> Result<World, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        cops(&[
            "synth",
            "--out",
            p(&data),
            "--seed",
            "1",
            "--set",
            "synth.n_users=200",
            "--set",
            "synth.refinding_rate=0.3",
        ])?;
        let cfg = data.join("cops.toml");
        cops(&["-c", p(&cfg), "ingest"])?;
        cops(&["-c", p(&cfg), "build-memory", "--jobs", "4"])?;
        Ok(World {
            _dir: dir,
            root,
            cfg,
            eval_a: None,
        })
    }

    fn data(&self) -> PathBuf {
        self.cfg.parent().unwrap().to_path_buf()
    }

    fn work(&self) -> PathBuf {
        self.data().join("ingest")
    }

    fn eval(&self, name: &str, extra: &[&str]) -> Result<(PathBuf, Duration), String> {
        let out = self.root.join(name);
        let mut args = vec!["-c", p(&self.cfg), "eval", "--jobs", "4", "--out", p(&out)];
        args.extend_from_slice(extra);
        let t = Instant::now();
        cops(&args)?;
        Ok((out, t.elapsed()))
    }

    fn eval_a(&mut self) -> Result<(PathBuf, Duration), String> {
        if self.eval_a.is_none() {
            self.eval_a = Some(self.eval("eval-a", &[])?);
        }
        Ok(self.eval_a.clone().unwrap())
    }
}

// ---------------------------------------------------------------- 1-3

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.gen_range(1..=20);
        let mut ranking = ids(n);
        ranking.shuffle(&mut rng);
        let rate: f64 = rng.gen();
        let relevant: BTreeSet<String> = ids(n).into_iter().filter(|_| rng.gen_bool(rate)).collect();

        // 1-based ranks of the relevant documents.
        let ranks: Vec<usize> = ranking
            .iter()
            .enumerate()
            .filter(|(_, d)| relevant.contains(*d))
            .map(|(i, _)| i + 1)
            .collect();
        // AP as the mean over relevant d of |{relevant e : rank e <= rank d}| / rank d.
        let ap = if ranks.is_empty() {
            0.0
        } else {
            ranks
                .iter()
                .map(|&r| ranks.iter().filter(|&&s| s <= r).count() as f64 / r as f64)
                .sum::<f64>()
                / ranks.len() as f64
        };
        let rr = ranks.iter().map(|&r| 1.0 / r as f64).fold(0.0, f64::max);
        let p1 = if relevant.contains(&ranking[0]) { 1.0 } else { 0.0 };

        for (name, got, want) in [
            ("AP", average_precision(&ranking, &relevant), ap),
            ("RR", reciprocal_rank(&ranking, &relevant), rr),
            ("P@1", p_at_1(&ranking, &relevant), p1),
        ] {
            let diff = (got - want).abs();
            worst = worst.max(diff);
            check(diff <= 1e-9, || format!("case {case}: {name} {got} vs oracle {want}"))?;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("1000 instances, max |diff| {worst:.1e}, {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..500 {
        let n = rng.gen_range(1..=20);
        let mut orig = ids(n);
        orig.shuffle(&mut rng);
        let relevant: BTreeSet<String> = ids(n).into_iter().filter(|_| rng.gen_bool(0.3)).collect();
        let c = p_improve(&orig, &orig, &relevant).map_err(|e| e.to_string())?;
        check(c.improved == 0 && c.degraded == 0, || format!("case {case}: {c:?}"))?;
    }
    let orig = vec!["neg".to_string(), "pos".to_string()];
    let flipped = vec!["pos".to_string(), "neg".to_string()];
    let rel = BTreeSet::from(["pos".to_string()]);
    let c = p_improve(&orig, &flipped, &rel).map_err(|e| e.to_string())?;
    check(c.improved == 1 && c.total_inverse == 1, || format!("single flip gave {c:?}"))?;
    let secs = t.elapsed().as_secs_f64();
    check(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("500 identity instances at 0 improved, flip 1/1, {secs:.2}s"))
}

fn criterion_3() -> Outcome {
    // Hand derivation as stated: idf = ln(5/3), tf part 2*2.2/(2+1.2) = 1.375.
    let hand = (5.0f64 / 3.0).ln() * 1.375;
    check((hand - 0.7024).abs() < 1e-3, || format!("hand arithmetic gives {hand}"))?;

    // Independent scalar computation from the formula: N = 1, df = 1,
    // tf = 2, |d| = avgdl = 3.
    let (n, df, tf, k1, b) = (1.0f64, 1.0f64, 2.0f64, 1.2f64, 0.75f64);
    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
    let scalar = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * 3.0 / 3.0));

    let doc = DocumentRef::new("d", "cat cat dog", "");
    let stats = CorpusStats::from_docs([&DocTerms::from_text(&doc.text())]);
    let got = bm25_score("cat", &doc, &stats, Bm25Params::default());

    // Zero-overlap fuzz.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let word = |rng: &mut ChaCha8Rng, prefix: &str| format!("{prefix}{}", rng.gen_range(0..50));
    for case in 0..1000 {
        let n_docs = rng.gen_range(1..=8);
        let docs: Vec<DocumentRef> = (0..n_docs)
            .map(|i| {
                let len = rng.gen_range(1..=12);
                let text: Vec<String> = (0..len).map(|_| word(&mut rng, "a")).collect();
                DocumentRef::new(format!("d{i}"), text.join(" "), "")
            })
            .collect();
        let terms: Vec<DocTerms> = docs.iter().map(|d| DocTerms::from_text(&d.text())).collect();
        let stats = CorpusStats::from_docs(&terms);
        let qlen = rng.gen_range(1..=6);
        let query: Vec<String> = (0..qlen).map(|_| word(&mut rng, "b")).collect();
        for d in &docs {
            let s = bm25_score(&query.join(" "), d, &stats, Bm25Params::default());
            check(s == 0.0, || format!("fuzz case {case}: zero-overlap score {s}"))?;
        }
    }

    check((got - scalar).abs() < 1e-12, || format!("implementation {got} disagrees with scalar {scalar}"))?;
    check((got - 0.7024).abs() <= 1e-3, || {
        format!(
            "score {got:.6} (independent scalar {scalar:.6}, idf ln(4/3)) vs hand-derived 0.7024 (idf ln(5/3)); \
             zero-overlap fuzz 1000/1000 exactly 0"
        )
    })?;
    Ok(format!("score {got:.6}; zero-overlap fuzz 1000/1000 exactly 0"))
}

// ---------------------------------------------------------------- 4-10

fn criterion_4(w: &mut World) -> Outcome {
    let (out, _) = w.eval_a()?;
    let manifest = Manifest::load(&w.data().join("manifest.json")).map_err(|e| e.to_string())?;
    let traces: Vec<QueryTrace> = jsonl(&out.join("traces.jsonl"))?;
    check(traces.len() == manifest.test_queries.len(), || {
        format!("{} traces vs {} manifest entries", traces.len(), manifest.test_queries.len())
    })?;
    let by_key: HashMap<(&str, i64), &QueryTrace> =
        traces.iter().map(|t| ((t.user_id.as_str(), t.timestamp), t)).collect();

    let mut planted = 0usize;
    let mut subset = 0usize;
    let mut hits = 0usize;
    for e in &manifest.test_queries {
        let t = by_key
            .get(&(e.user_id.as_str(), e.timestamp))
            .ok_or_else(|| format!("no trace for {} @ {}", e.user_id, e.timestamp))?;
        if !e.planted_refinding {
            continue;
        }
        planted += 1;
        let doc = e.planted_doc.as_str();
        if t.final_ranking.iter().any(|d| d == doc) {
            subset += 1;
            check(t.answered_by == "sensory", || {
                format!("{} {:?} answered by {}", e.user_id, e.query, t.answered_by)
            })?;
            if t.final_ranking[0] == doc {
                hits += 1;
            }
        }
    }
    check(hits == subset, || format!("P@1 on planted subset {hits}/{subset}"))?;
    let sensory = traces.iter().filter(|t| t.answered_by == "sensory").count();
    let total = traces.len();
    // Same denominator, so the fractions are equal exactly when the counts are.
    check(sensory == planted, || {
        format!(
            "sensory fraction {sensory}/{total} vs planted fraction {planted}/{total} ({:.6})",
            manifest.planted_fraction()
        )
    })?;
    Ok(format!(
        "planted subset {subset}: P@1 = 1.0; sensory {sensory}/{total} = planted {planted}/{total}"
    ))
}

fn criterion_5(w: &World) -> Outcome {
    let out = w.root.join("ablate");
    cops(&["-c", p(&w.cfg), "ablate", "--jobs", "4", "--out", p(&out)])?;
    let table = json(&out.join("ablation.json"))?;
    let rows = table["rows"].as_array().ok_or("ablation.json has no rows")?;
    let names: Vec<&str> = rows.iter().filter_map(|r| r["name"].as_str()).collect();
    let want = ["sensory-off", "working-off", "longE-off", "longI-off", "full"];
    check(names == want, || format!("rows {names:?}"))?;
    let row = |n: &str| rows.iter().find(|r| r["name"] == n).unwrap();
    let off = row("sensory-off");
    let full = row("full");
    let answered = u64_at(off, "/report/sensory_answered")?;
    check(answered == 0, || format!("sensory-off answered {answered} via sensory"))?;
    let (l_off, l_full) = (f64_at(off, "/report/latency_mean")?, f64_at(full, "/report/latency_mean")?);
    check(l_off >= l_full, || format!("latency sensory-off {l_off} < full {l_full}"))?;
    Ok(format!(
        "5 rows; sensory-off answers 0 via sensory; latency {l_off:.3}s >= full {l_full:.3}s (x{:.2})",
        l_off / l_full
    ))
}

fn criterion_6(w: &mut World) -> Outcome {
    let (full_dir, _) = w.eval_a()?;
    let (off_dir, _) = w.eval(
        "eval-off",
        &[
            "--set",
            "pipeline.sensory=false",
            "--set",
            "pipeline.working=false",
            "--set",
            "pipeline.longterm_explicit=false",
            "--set",
            "pipeline.longterm_implicit=false",
        ],
    )?;
    let full = f64_at(&json(&full_dir.join("metrics.json"))?, "/non_repeated/map")?;
    let off = f64_at(&json(&off_dir.join("metrics.json"))?, "/non_repeated/map")?;
    check(full > off, || format!("non-repeated MAP full {full:.4} <= all-off {off:.4}"))?;
    Ok(format!("non-repeated MAP full {full:.4} > all-off {off:.4}"))
}

fn criterion_7(w: &mut World) -> Outcome {
    // Per-user interaction counts straight from the log.
    let log = w.data().join("log.tsv");
    let file = File::open(&log).map_err(|e| e.to_string())?;
    let parsed = parse_log(BufReader::new(file)).map_err(|e| e.to_string())?;
    let counts: BTreeMap<&str, usize> =
        parsed.users.iter().map(|u| (u.user_id.as_str(), u.interactions.len())).collect();

    let report = json(&w.work().join("report.json"))?;
    let per_user = report["per_user"].as_array().ok_or("report.json has no per_user")?;
    check(per_user.len() == counts.len(), || format!("{} users split of {}", per_user.len(), counts.len()))?;
    let histories: Vec<UserHistory> = serde_json::from_value(json(&w.work().join("histories.json"))?)
        .map_err(|e| e.to_string())?;
    let tests: Vec<TestQuery> = jsonl(&w.work().join("tests.jsonl"))?;
    for u in per_user {
        let id = u["user_id"].as_str().ok_or("per_user entry without id")?;
        let n = *counts.get(id).ok_or_else(|| format!("{id} not in log"))?;
        let want = n * 85 / 100;
        let hist = histories.iter().find(|h| h.user_id == id).map(UserHistory::len);
        let test = tests.iter().filter(|t| t.user_id == id).count();
        check(hist == Some(want) && want + test == n, || {
            format!("{id}: n {n}, history {hist:?}, test {test}, floor(0.85n) {want}")
        })?;
    }

    // The partition, from the core split and from every eval run so far.
    let split = split_repeated(&tests, &histories);
    let rep: HashSet<usize> = split.repeated.iter().copied().collect();
    let non: HashSet<usize> = split.non_repeated.iter().copied().collect();
    check(rep.is_disjoint(&non), || "repeated and non-repeated overlap".into())?;
    check(rep.len() + non.len() == tests.len() && rep.iter().chain(&non).all(|&i| i < tests.len()), || {
        format!("{} + {} indices for {} queries", rep.len(), non.len(), tests.len())
    })?;
    let mut runs = 0;
    for name in ["eval-a", "eval-b", "eval-off"] {
        let m = w.root.join(name).join("metrics.json");
        if !m.exists() {
            continue;
        }
        let m = json(&m)?;
        let (all, r, nr) = (u64_at(&m, "/main/queries")?, u64_at(&m, "/repeated/queries")?, u64_at(&m, "/non_repeated/queries")?);
        check(r + nr == all && r == rep.len() as u64, || format!("{name}: {r} + {nr} vs {all}"))?;
        runs += 1;
    }
    Ok(format!(
        "{} users at floor(0.85n); {} repeated + {} non-repeated = {} on {runs} runs",
        per_user.len(),
        rep.len(),
        non.len(),
        tests.len()
    ))
}

fn criterion_8(w: &mut World) -> Outcome {
    let (a, _) = w.eval_a()?;
    let (b, _) = w.eval("eval-b", &[])?;
    for f in ["metrics.json", "traces.jsonl"] {
        let (x, y) = (std::fs::read(a.join(f)), std::fs::read(b.join(f)));
        let (x, y) = (x.map_err(|e| e.to_string())?, y.map_err(|e| e.to_string())?);
        check(x == y, || format!("{f} differs between runs"))?;
    }
    Ok("metrics.json and traces.jsonl byte-identical across two runs".into())
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect()
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = p(dir.path());
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study/cops.toml");
    let cfg = p(&cfg);
    cops(&["-c", cfg, "--out", out, "ingest"])?;
    cops(&["-c", cfg, "--out", out, "build-memory"])?;
    let case = ["-c", cfg, "--out", out, "case", "--user", "beauty_user", "--query", "Maybelline new yorky"];
    let table = cops(&case)?;
    let trace: QueryTrace =
        serde_json::from_str(&cops(&[&case[..], &["--json"]].concat())?).map_err(|e| e.to_string())?;

    let sensory = trace.sensory_response.as_deref().unwrap_or("");
    check(sensory == "No re-finding data found", || format!("sensory row {sensory:?}"))?;
    let rewritten = trace.rewritten_query.as_deref().unwrap_or("");
    check(rewritten == "Maybelline New York make up", || format!("re-writing row {rewritten:?}"))?;
    let explicit = trace.retrieved_explicit.clone().unwrap_or_default();
    let implicit = trace.retrieved_implicit.clone().unwrap_or_default();
    let want_e = [
        "Shoes: sandals, designer shoes",
        "Cosmetics Products: MAC, Loreal Paris Hair",
        "Salon Services: Killeen, Texas, hair styling",
    ];
    let want_i = ["Gender: Female", "Age: teens to middle-aged", "Social Image: Beauty Enthusiast, Fashion"];
    check(explicit == want_e, || format!("explicit entries {explicit:?}"))?;
    check(implicit == want_i, || format!("implicit entries {implicit:?}"))?;
    let model = trace.user_model.as_deref().unwrap_or("");
    let want_m = "Fashion trends featuring Maybelline New York cosmetics and makeup products";
    check(squash(model) == squash(want_m), || format!("user modeling row {model:?}"))?;
    // The printed table carries the same rows.
    for line in [sensory, rewritten, model].iter().chain(want_e.iter()).chain(want_i.iter()) {
        check(table.contains(line), || format!("table lacks {line:?}\n{table}"))?;
    }
    Ok("sensory, re-writing, 6 retrieved entries, and user modeling rows match".into())
}

fn criterion_10(w: &mut World) -> Outcome {
    let tests: Vec<TestQuery> = jsonl(&w.work().join("tests.jsonl"))?;
    let mut per_user: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &tests {
        *per_user.entry(t.user_id.as_str()).or_default() += 1;
    }
    check(per_user.len() == 200 && per_user.values().all(|&n| n == 20), || {
        format!("{} users, test counts {:?}", per_user.len(), per_user.values().collect::<BTreeSet<_>>())
    })?;
    let (_, took) = w.eval_a()?;
    let secs = took.as_secs_f64();
    check(secs < 60.0, || format!("eval took {secs:.1}s"))?;
    Ok(format!("200 users x 20 queries, eval --jobs 4 in {secs:.1}s"))
}

// ---------------------------------------------------------------- main

fn main() {
    // `cargo test -- --list` and filters from the default harness.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }

    let names = [
        "metric oracle equivalence",
        "P-imp contract",
        "BM25 point check",
        "sensory fidelity on synthetic logs",
        "ablation structure",
        "directional personalization signal",
        "split fidelity",
        "determinism",
        "case-study fidelity",
        "end-to-end scale/runtime",
    ];
    let mut outcomes: Vec<Outcome> = vec![criterion_1(), criterion_2(), criterion_3()];
    match World::prepare() {
        Ok(mut w) => {
            // Criterion 10 runs first so its timing is the first eval on a fresh dataset.
            let c10 = criterion_10(&mut w);
            outcomes.push(criterion_4(&mut w));
            outcomes.push(criterion_5(&w));
            outcomes.push(criterion_6(&mut w));
            let c8 = criterion_8(&mut w);
            outcomes.push(criterion_7(&mut w));
            outcomes.push(c8);
            outcomes.push(criterion_9());
            outcomes.push(c10);
        }
        Err(e) => {
            for _ in 4..=8 {
                outcomes.push(Err(format!("dataset preparation failed: {e}")));
            }
            outcomes.push(criterion_9());
            outcomes.push(Err(format!("dataset preparation failed: {e}")));
        }
    }

    let mut unexpected = 0;
    for (i, (name, outcome)) in names.iter().zip(&outcomes).enumerate() {
        let n = i as u32 + 1;
        let red = EXPECTED_RED.contains(&n);
        match outcome {
            Ok(detail) => {
                println!("[PASS] criterion {n}: {name}: {detail}");
                if red {
                    println!("       criterion {n} was expected to fail; update EXPECTED_RED");
                    unexpected += 1;
                }
            }
            Err(detail) => {
                let tag = if red { " (known, unattainable as stated)" } else { "" };
                println!("[FAIL] criterion {n}: {name}: {detail}{tag}");
                if !red {
                    unexpected += 1;
                }
            }
        }
    }
    let passed = outcomes.iter().filter(|o| o.is_ok()).count();
    println!("acceptance: {passed}/{} criteria pass, {unexpected} unexpected", outcomes.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}

//! One function per subcommand. Inputs are only read; everything produced
//! goes under the configured output, work, and memory directories.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cops_core::cognition::{
    CachedProvider, CognitiveUnit, HttpProvider, JsonlSink, MockProvider, MockRules, PromptTemplates, Provider,
};
use cops_core::eval::{
    ablation_markdown, ablation_suite, build_states, curve_csv, evaluate_run, history_sweep, metrics_markdown,
    original_order, split_repeated, write_json, write_traces, EvalUser, MetricReport, SweepUser,
};
use cops_core::log::{parse_log, split_history, DocumentRef, TestQuery, UserHistory};
use cops_core::longterm::{LongTermStore, WindowMode};
use cops_core::pipeline::{Pipeline, PipelineConfig, QueryTrace, UserState};
use cops_core::ranking::{attach_candidates, bm25_topk, Corpus, RankerKind};
use cops_core::sensory::SensoryStore;
use cops_core::synthgen::generate;
use cops_core::text::normalize_query;
use cops_core::Error;

use crate::config::{ProviderKind, RunConfig};
use crate::error::{CliError, CliResult};

fn mkdir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| {
        Error::Json {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
        .into()
    })
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.into(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e).into())
}

fn build_provider(cfg: &RunConfig, kind: ProviderKind) -> CliResult<Arc<dyn Provider>> {
    let p = &cfg.provider;
    Ok(match kind {
        ProviderKind::Mock => match &p.mock_rules {
            Some(path) => {
                let mut rules = MockRules::load(path)?;
                rules.seed = cfg.seed;
                Arc::new(MockProvider::new(rules)?)
            }
            None => {
                log::warn!("no provider.mock_rules configured; the mock provider will echo prompts");
                Arc::new(MockProvider::echo())
            }
        },
        ProviderKind::Http => Arc::new(HttpProvider::new(&p.client_config())?),
        ProviderKind::Cached => {
            let path = p
                .cache
                .clone()
                .ok_or_else(|| CliError::Usage("provider.kind = cached needs provider.cache".into()))?;
            let inner = match p.cache_inner {
                Some(ProviderKind::Cached) => {
                    return Err(CliError::Usage("provider.cache_inner cannot itself be cached".into()))
                }
                Some(k) => Some(build_provider(cfg, k)?),
                None => None,
            };
            Arc::new(CachedProvider::open(&path, inner)?)
        }
    })
}

pub fn cognitive_unit(cfg: &RunConfig) -> CliResult<CognitiveUnit> {
    let provider = build_provider(cfg, cfg.provider.kind)?;
    let mut unit = CognitiveUnit::new(provider, cfg.provider.client_config());
    if let Some(dir) = &cfg.paths.prompts {
        unit = unit.with_templates(PromptTemplates::load_dir(dir)?);
    }
    if let Some(path) = &cfg.paths.completion_log {
        if let Some(parent) = path.parent() {
            mkdir(parent)?;
        }
        unit = unit.with_sink(Arc::new(JsonlSink::create(path)?));
    }
    Ok(unit)
}

// ---------------------------------------------------------------- synth

/// Generates a synthetic dataset and a ready-to-run `cops.toml` next to it.
pub fn synth(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir();
    let data = generate(&cfg.synth)?;
    data.write(&out)?;
    let generated = SynthRunConfig {
        seed: cfg.synth.seed,
        paths: SynthPaths {
            log: "log.tsv",
            corpus: "corpus.jsonl",
            work: "ingest",
            memory: "memory",
            out: "out",
        },
        provider: SynthProvider {
            kind: "mock",
            mock_rules: "mock_rules.json",
        },
        pipeline: SynthPipeline {
            ranker: RankerKind::Term,
            split_fraction: cfg.synth.split_fraction,
        },
    };
    let text = toml::to_string(&generated).map_err(|e| Error::Data(e.to_string()))?;
    let path = out.join("cops.toml");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!(
        "wrote {} users, {} documents, {} test queries ({:.1}% planted re-finding) to {}",
        data.users.len(),
        data.corpus.len(),
        data.manifest.test_queries.len(),
        100.0 * data.manifest.planted_fraction(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SynthRunConfig {
    seed: u64,
    paths: SynthPaths,
    provider: SynthProvider,
    pipeline: SynthPipeline,
}

#[derive(Serialize)]
struct SynthPaths {
    log: &'static str,
    corpus: &'static str,
    work: &'static str,
    memory: &'static str,
    out: &'static str,
}

#[derive(Serialize)]
struct SynthProvider {
    kind: &'static str,
    mock_rules: &'static str,
}

#[derive(Serialize)]
struct SynthPipeline {
    ranker: RankerKind,
    split_fraction: f64,
}

// ---------------------------------------------------------------- ingest

const HISTORIES: &str = "histories.json";
const TESTS: &str = "tests.jsonl";
const TITLES: &str = "titles.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSplitCounts {
    pub user_id: String,
    pub interactions: usize,
    pub history: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_lines: usize,
    pub malformed_lines: Vec<usize>,
    pub users: usize,
    pub interactions: usize,
    pub excluded_users: Vec<String>,
    pub split_fraction: f64,
    pub history_interactions: usize,
    pub test_queries: usize,
    pub repeated: usize,
    pub non_repeated: usize,
    pub candidate_k: usize,
    /// Test queries whose clicked documents were missing from the top-k.
    pub injected: usize,
    pub per_user: Vec<UserSplitCounts>,
}

/// Parses the log, splits history from test queries, and attaches candidate
/// pools.
pub fn ingest(cfg: &RunConfig) -> CliResult<IngestReport> {
    let log_path = cfg.require("log", &cfg.paths.log)?;
    let file = File::open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let parsed = parse_log(BufReader::new(file))?;
    let corpus = match &cfg.paths.corpus {
        Some(_) => Corpus::load_jsonl(&cfg.require("corpus", &cfg.paths.corpus)?)?,
        None => {
            log::warn!("no corpus configured; candidates come from logged titles");
            let mut docs: Vec<DocumentRef> = parsed
                .titles
                .iter()
                .map(|(id, t)| DocumentRef::new(id.clone(), t.clone(), ""))
                .collect();
            docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
            Corpus::new(docs)?
        }
    };
    let split = split_history(&parsed.users, cfg.pipeline.split_fraction)?;
    let k = cfg.pipeline.candidate_k;
    let tests: Vec<TestQuery> = split
        .held_out
        .iter()
        .map(|h| attach_candidates(&corpus, h, k, cfg.pipeline.inject, &parsed.titles))
        .collect();
    let injected = split
        .held_out
        .iter()
        .filter(|h| {
            let top: Vec<String> = bm25_topk(&corpus, &h.interaction.query, k).into_iter().map(|d| d.doc_id).collect();
            h.interaction.clicked.iter().any(|c| !top.contains(c))
        })
        .count();
    let rep = split_repeated(&tests, &split.histories);
    let per_user = split
        .histories
        .iter()
        .map(|h| {
            let test = tests.iter().filter(|t| t.user_id == h.user_id).count();
            UserSplitCounts {
                user_id: h.user_id.clone(),
                interactions: h.len() + test,
                history: h.len(),
                test,
            }
        })
        .collect();
    let report = IngestReport {
        total_lines: parsed.total_lines,
        malformed_lines: parsed.malformed_lines.clone(),
        users: parsed.users.len(),
        interactions: parsed.interaction_count(),
        excluded_users: split.excluded_users.clone(),
        split_fraction: cfg.pipeline.split_fraction,
        history_interactions: split.histories.iter().map(UserHistory::len).sum(),
        test_queries: tests.len(),
        repeated: rep.repeated.len(),
        non_repeated: rep.non_repeated.len(),
        candidate_k: k,
        injected,
        per_user,
    };
    let work = cfg.work_dir();
    mkdir(&work)?;
    write_json(&work.join(HISTORIES), &split.histories)?;
    write_jsonl(&work.join(TESTS), &tests)?;
    let titles: BTreeMap<&String, &String> = parsed.titles.iter().collect();
    write_json(&work.join(TITLES), &titles)?;
    write_json(&work.join("report.json"), &report)?;
    println!(
        "{} users, {} history interactions, {} test queries ({} repeated) -> {}",
        split.histories.len(),
        report.history_interactions,
        report.test_queries,
        report.repeated,
        work.display()
    );
    Ok(report)
}

struct Ingested {
    histories: Vec<UserHistory>,
    tests: Vec<TestQuery>,
    titles: HashMap<String, String>,
}

fn load_ingested(cfg: &RunConfig) -> CliResult<Ingested> {
    let work = cfg.work_dir();
    let need = |name: &str| -> CliResult<PathBuf> {
        let p = work.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Usage(format!("{} not found; run `cops ingest` first", p.display())))
        }
    };
    Ok(Ingested {
        histories: read_json(&need(HISTORIES)?)?,
        tests: read_jsonl(&need(TESTS)?)?,
        titles: read_json(&need(TITLES)?)?,
    })
}

// ---------------------------------------------------------------- memory

const INDEX: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryIndexEntry {
    pub user_id: String,
    pub dir: String,
    pub slots: usize,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryIndex {
    pub provider: String,
    pub window_size: u64,
    pub window_mode: WindowMode,
    pub provider_calls: usize,
    pub provider_failures: usize,
    pub degradations: BTreeMap<String, usize>,
    pub users: Vec<MemoryIndexEntry>,
}

/// A file-system-safe directory name; collisions get a numeric suffix.
pub fn sanitize(user_id: &str, taken: &mut std::collections::HashSet<String>) -> String {
    let mut base: String = user_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if base.is_empty() {
        base.push('_');
    }
    let mut name = base.clone();
    let mut n = 2;
    while !taken.insert(name.clone()) {
        name = format!("{base}-{n}");
        n += 1;
    }
    name
}

/// Builds sensory and long-term memory for every user, offline.
pub fn build_memory(cfg: &RunConfig) -> CliResult<MemoryIndex> {
    let data = load_ingested(cfg)?;
    let unit = cognitive_unit(cfg)?;
    let pipeline = Pipeline::new(unit.clone(), cfg.pipeline.clone()).with_titles(Arc::new(data.titles));
    let (states, meter) = build_states(&pipeline, &data.histories, cfg.jobs)?;
    let root = cfg.memory_dir();
    mkdir(&root)?;
    let mut taken = std::collections::HashSet::new();
    let mut users = Vec::with_capacity(states.len());
    for s in &states {
        let dir = sanitize(&s.user_id, &mut taken);
        let udir = root.join(&dir);
        mkdir(&udir)?;
        s.sensory.persist(&udir.join("sensory.json"))?;
        s.longterm.persist(&udir.join("longterm.json"))?;
        users.push(MemoryIndexEntry {
            user_id: s.user_id.clone(),
            dir,
            slots: s.longterm.slots.len(),
            entries: s.longterm.entry_count(),
        });
    }
    let index = MemoryIndex {
        provider: unit.provider_id(),
        window_size: cfg.pipeline.window_size,
        window_mode: cfg.pipeline.window_mode,
        provider_calls: meter.calls,
        provider_failures: meter.failures,
        degradations: count(&meter.degradations),
        users,
    };
    write_json(&root.join(INDEX), &index)?;
    println!(
        "built memory for {} users ({} provider calls, {} failures) -> {}",
        index.users.len(),
        index.provider_calls,
        index.provider_failures,
        root.display()
    );
    Ok(index)
}

fn count(items: &[String]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(i.clone()).or_insert(0) += 1;
    }
    m
}

fn load_states(cfg: &RunConfig, histories: &[UserHistory]) -> CliResult<Vec<UserState>> {
    let root = cfg.memory_dir();
    let index_path = root.join(INDEX);
    if !index_path.exists() {
        return Err(CliError::Usage(format!(
            "{} not found; run `cops build-memory` first",
            index_path.display()
        )));
    }
    let index: MemoryIndex = read_json(&index_path)?;
    if index.window_size != cfg.pipeline.window_size || index.window_mode != cfg.pipeline.window_mode {
        log::warn!(
            "memory was built with window {} ({:?}); the configuration asks for {} ({:?})",
            index.window_size,
            index.window_mode,
            cfg.pipeline.window_size,
            cfg.pipeline.window_mode
        );
    }
    let dirs: HashMap<&str, &str> = index.users.iter().map(|u| (u.user_id.as_str(), u.dir.as_str())).collect();
    histories
        .iter()
        .map(|h| {
            let dir = dirs
                .get(h.user_id.as_str())
                .ok_or_else(|| Error::Data(format!("no memory for user {}; rebuild memory", h.user_id)))?;
            let udir = root.join(dir);
            let sensory = SensoryStore::load(&udir.join("sensory.json"))?;
            let longterm = LongTermStore::load(&udir.join("longterm.json"))?;
            Ok(UserState::from_parts(sensory, longterm, h.short_term.clone()))
        })
        .collect()
}

fn eval_users(states: Vec<UserState>, tests: &[TestQuery], histories: &[UserHistory]) -> Vec<EvalUser> {
    let split = split_repeated(tests, histories);
    let mut repeated = vec![false; tests.len()];
    for i in split.repeated {
        repeated[i] = true;
    }
    let mut by_user: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, t) in tests.iter().enumerate() {
        by_user.entry(t.user_id.as_str()).or_default().push(i);
    }
    states
        .into_iter()
        .filter_map(|state| {
            let idx = by_user.get(state.user_id.as_str())?.clone();
            Some(EvalUser {
                queries: idx.iter().map(|&i| tests[i].clone()).collect(),
                repeated: idx.iter().map(|&i| repeated[i]).collect(),
                state,
            })
        })
        .collect()
}

struct Prepared {
    pipeline: Pipeline,
    users: Vec<EvalUser>,
}

fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let data = load_ingested(cfg)?;
    let states = load_states(cfg, &data.histories)?;
    let pipeline = Pipeline::new(cognitive_unit(cfg)?, cfg.pipeline.clone()).with_titles(Arc::new(data.titles));
    let users = eval_users(states, &data.tests, &data.histories);
    Ok(Prepared { pipeline, users })
}

// ---------------------------------------------------------------- run / eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingLine {
    pub user_id: String,
    pub query: String,
    pub timestamp: i64,
    pub ranker: String,
    pub ranking: Vec<String>,
}

const MAIN_LABEL: &str = "cops";

/// Runs the configured pipeline and writes rankings, traces, and one report.
pub fn run(cfg: &RunConfig) -> CliResult<MetricReport> {
    let prep = prepare(cfg)?;
    let opts = cfg.eval_options();
    let out = evaluate_run(&prep.pipeline, &prep.users, &opts)?;
    let dir = cfg.out_dir();
    mkdir(&dir)?;
    let lines: Vec<RankingLine> = out
        .traces
        .iter()
        .map(|t| RankingLine {
            user_id: t.user_id.clone(),
            query: t.query.clone(),
            timestamp: t.timestamp,
            ranker: t.answered_by.clone(),
            ranking: t.final_ranking.clone(),
        })
        .collect();
    write_jsonl(&dir.join("rankings.jsonl"), &lines)?;
    write_traces(&dir.join("traces.jsonl"), &out.traces)?;
    let report = out.report(MAIN_LABEL, &opts);
    write_json(&dir.join("metrics.json"), &report)?;
    println!("{}", metrics_markdown(std::slice::from_ref(&report)));
    Ok(report)
}

/// Everything `eval` reports, written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pipeline: PipelineConfig,
    pub main: MetricReport,
    pub repeated: MetricReport,
    pub non_repeated: MetricReport,
    pub baselines: Vec<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub jobs: usize,
    pub load_seconds: f64,
    pub eval_seconds: f64,
    pub baseline_seconds: f64,
    pub total_seconds: f64,
    pub queries: usize,
    /// Summed simulated or measured model latency of the main run.
    pub model_latency_seconds: f64,
}

/// Evaluates the pipeline, the baselines, and the repeated/non-repeated
/// breakdown.
pub fn eval(cfg: &RunConfig) -> CliResult<EvalSummary> {
    let t0 = Instant::now();
    let prep = prepare(cfg)?;
    let load = t0.elapsed().as_secs_f64();
    let opts = cfg.eval_options();
    let t1 = Instant::now();
    let out = evaluate_run(&prep.pipeline, &prep.users, &opts)?;
    let eval_secs = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let mut baselines = Vec::new();
    if cfg.eval.baselines {
        baselines.push(original_order(&prep.users).report("original", &opts));
        let pclick = prep.pipeline.reconfigured(PipelineConfig {
            ranker: RankerKind::Pclick,
            ..cfg.pipeline.clone().all_off()
        });
        baselines.push(evaluate_run(&pclick, &prep.users, &opts)?.report("p-click", &opts));
    }
    let baseline_secs = t2.elapsed().as_secs_f64();

    let summary = EvalSummary {
        pipeline: cfg.pipeline.clone(),
        main: out.report(MAIN_LABEL, &opts),
        repeated: out.report_where("cops (repeated)", &opts, |r| r.repeated),
        non_repeated: out.report_where("cops (non-repeated)", &opts, |r| !r.repeated),
        baselines,
    };
    let dir = cfg.out_dir();
    mkdir(&dir)?;
    write_json(&dir.join("metrics.json"), &summary)?;
    let mut table: Vec<MetricReport> = summary.baselines.clone();
    table.push(summary.main.clone());
    table.push(summary.repeated.clone());
    table.push(summary.non_repeated.clone());
    let md = metrics_markdown(&table);
    let md_path = dir.join("metrics.md");
    std::fs::write(&md_path, &md).map_err(|e| Error::io(&md_path, e))?;
    write_traces(&dir.join("traces.jsonl"), &out.traces)?;
    write_jsonl(&dir.join("queries.jsonl"), &out.rows)?;
    let timing = Timing {
        jobs: cfg.jobs,
        load_seconds: load,
        eval_seconds: eval_secs,
        baseline_seconds: baseline_secs,
        total_seconds: t0.elapsed().as_secs_f64(),
        queries: out.rows.len(),
        model_latency_seconds: out.rows.iter().map(|r| r.latency).sum(),
    };
    write_json(&dir.join("timing.json"), &timing)?;
    println!("{md}");
    Ok(summary)
}

// ---------------------------------------------------------------- ablate / sweep

pub fn ablate(cfg: &RunConfig) -> CliResult<cops_core::eval::AblationTable> {
    let prep = prepare(cfg)?;
    let opts = cfg.eval_options();
    let table = ablation_suite(&prep.pipeline, &prep.users, &opts)?;
    let dir = cfg.out_dir();
    mkdir(&dir)?;
    let md = ablation_markdown(&table);
    let md_path = dir.join("ablation.md");
    std::fs::write(&md_path, &md).map_err(|e| Error::io(&md_path, e))?;
    write_json(&dir.join("ablation.json"), &table)?;
    println!("{md}");
    Ok(table)
}

pub fn sweep(cfg: &RunConfig) -> CliResult<Vec<cops_core::eval::CurvePoint>> {
    let data = load_ingested(cfg)?;
    let pipeline = Pipeline::new(cognitive_unit(cfg)?, cfg.pipeline.clone()).with_titles(Arc::new(data.titles));
    let shells: Vec<UserState> = data
        .histories
        .iter()
        .map(|h| UserState::from_parts(SensoryStore::new(h.user_id.clone()), LongTermStore::new(h.user_id.clone(), 1, WindowMode::default()), h.short_term.clone()))
        .collect();
    let histories: HashMap<&str, &UserHistory> = data.histories.iter().map(|h| (h.user_id.as_str(), h)).collect();
    let users: Vec<SweepUser> = eval_users(shells, &data.tests, &data.histories)
        .into_iter()
        .map(|u| SweepUser {
            history: (*histories[u.state.user_id.as_str()]).clone(),
            queries: u.queries,
            repeated: u.repeated,
        })
        .collect();
    let points = history_sweep(&pipeline, &cfg.eval.fractions, &users, &cfg.eval_options())?;
    let dir = cfg.out_dir();
    mkdir(&dir)?;
    let csv_path = dir.join("curve.csv");
    std::fs::write(&csv_path, curve_csv(&points)?).map_err(|e| Error::io(&csv_path, e))?;
    write_json(&dir.join("curve.json"), &points)?;
    for p in &points {
        println!("{:>5.0}%  MAP {:.4}  MRR {:.4}", p.fraction * 100.0, p.report.map, p.report.mrr);
    }
    Ok(points)
}

// ---------------------------------------------------------------- case

/// Runs one query for one user and returns its trace.
pub fn case(cfg: &RunConfig, user: &str, query: &str) -> CliResult<QueryTrace> {
    let data = load_ingested(cfg)?;
    let history = data
        .histories
        .iter()
        .find(|h| h.user_id == user)
        .ok_or_else(|| Error::Data(format!("unknown user {user}")))?;
    let mut state = load_states(cfg, std::slice::from_ref(history))?.remove(0);
    let pipeline = Pipeline::new(cognitive_unit(cfg)?, cfg.pipeline.clone()).with_titles(Arc::new(data.titles));
    let mine: Vec<TestQuery> = data.tests.iter().filter(|t| t.user_id == user).cloned().collect();
    let key = normalize_query(query);
    let trace = match mine.iter().position(|t| normalize_query(&t.query) == key) {
        // replay earlier test queries so the short-term session is as it was
        Some(i) => pipeline.run_user(&mut state, &mine[..=i]).pop().expect("one outcome").trace,
        None => {
            let candidates = match &cfg.paths.corpus {
                Some(p) if p.exists() => bm25_topk(&Corpus::load_jsonl(p)?, query, cfg.pipeline.candidate_k),
                _ => vec![],
            };
            let q = TestQuery {
                user_id: user.to_string(),
                session_id: state.short_term.session_id.clone(),
                query: query.to_string(),
                timestamp: history.interactions().last().map_or(0, |i| i.timestamp + 1),
                candidates,
                relevant: Default::default(),
                skipped: vec![],
            };
            pipeline.handle_query(&state, &q).trace
        }
    };
    Ok(trace)
}

/// The trace laid out as a two-column table: query, sensory response,
/// rewriting, profile retrieval, and user modeling.
pub fn case_table(trace: &QueryTrace) -> String {
    const SKIPPED: &str = "(not reached)";
    const OFF: &str = "(disabled)";
    let answered = trace.answered_by_sensory();
    let mut rows: Vec<(&str, Vec<String>)> = vec![("Query", vec![trace.query.clone()])];
    rows.push((
        "Sensory Response",
        vec![trace.sensory_response.clone().unwrap_or_else(|| OFF.into())],
    ));
    let stage = |v: &Option<String>| -> String {
        match v {
            Some(s) => s.clone(),
            None if answered => SKIPPED.into(),
            None => OFF.into(),
        }
    };
    rows.push(("Query Re-writing", vec![stage(&trace.rewritten_query)]));
    let mut profile = Vec::new();
    for (title, entries) in [
        ("Explicit Memory Retrieval", &trace.retrieved_explicit),
        ("Implicit Memory Retrieval", &trace.retrieved_implicit),
    ] {
        profile.push(title.to_string());
        match entries {
            Some(list) if list.is_empty() => profile.push("-(none)".into()),
            Some(list) => profile.extend(list.iter().map(|e| format!("-{e}"))),
            None => profile.push(format!("-{}", if answered { SKIPPED } else { OFF })),
        }
    }
    rows.push(("User Profile Retrieval", profile));
    rows.push(("User Modeling", vec![stage(&trace.user_model)]));
    let top: Vec<String> = trace.final_ranking.iter().take(3).cloned().collect();
    rows.push((
        "Top Documents",
        vec![if top.is_empty() { "(no candidates)".into() } else { top.join(", ") }],
    ));

    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, lines) in rows {
        for (i, line) in lines.iter().enumerate() {
            let label = if i == 0 { k } else { "" };
            out.push_str(&format!("{label:<width$} | {line}\n"));
        }
    }
    out
}

/// Drops user-visible whitespace differences for comparisons.
pub fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

//! Evaluation: per-query metrics, aggregated reports, the repeated /
//! non-repeated split, history-length sweeps, and the memory-unit ablation.

mod metrics;
mod report;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cognition::Meter;
use crate::error::{Error, Result};
use crate::log::{TestQuery, UserHistory};
use crate::pipeline::{Pipeline, PipelineConfig, QueryTrace, UserState};
use crate::text::normalize_query;

pub use metrics::{average_precision, p_at_1, p_improve, reciprocal_rank, PairCounts};
pub use report::{
    ablation_markdown, curve_csv, metrics_markdown, write_json, write_traces, AblationRow,
    AblationTable, CurvePoint, MetricReport,
};

/// Name of the P-imp definition implemented here.
pub const PIMP_VERSION: &str = "pimp-v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PimpAggregation {
    /// Pairs pooled over all queries.
    #[default]
    Micro,
    /// Mean of per-query ratios over queries with at least one inverse pair.
    Macro,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Query,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub jobs: usize,
    pub pimp: PimpAggregation,
    pub averaging: Averaging,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            pimp: PimpAggregation::Micro,
            averaging: Averaging::Query,
        }
    }
}

/// Runs `f` on a pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// A user's memory and test queries, plus which queries repeat history.
#[derive(Debug, Clone)]
pub struct EvalUser {
    pub state: UserState,
    pub queries: Vec<TestQuery>,
    pub repeated: Vec<bool>,
}

/// Metrics and outcome of one test query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub user_id: String,
    pub query: String,
    pub timestamp: i64,
    pub ap: f64,
    pub rr: f64,
    pub p1: f64,
    pub pairs: PairCounts,
    /// Model latency in seconds.
    pub latency: f64,
    pub answered_by: String,
    pub repeated: bool,
    pub relevant_in_candidates: bool,
    pub parse_failure: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degradations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<QueryRow>,
    pub traces: Vec<QueryTrace>,
}

impl RunOutput {
    pub fn report(&self, label: &str, opts: &EvalOptions) -> MetricReport {
        MetricReport::from_rows(label, self.rows.iter(), opts)
    }

    pub fn report_where(&self, label: &str, opts: &EvalOptions, keep: impl Fn(&QueryRow) -> bool) -> MetricReport {
        MetricReport::from_rows(label, self.rows.iter().filter(|r| keep(r)), opts)
    }
}

fn score_query(q: &TestQuery, trace: &QueryTrace, repeated: bool) -> QueryRow {
    let original = q.candidate_ids();
    let ranking = &trace.final_ranking;
    let relevant_in_candidates = original.iter().any(|d| q.relevant.contains(d));
    let (pairs, error) = match p_improve(&original, ranking, &q.relevant) {
        Ok(p) => (p, None),
        Err(e) => (PairCounts::default(), Some(e.to_string())),
    };
    QueryRow {
        user_id: q.user_id.clone(),
        query: q.query.clone(),
        timestamp: q.timestamp,
        ap: average_precision(ranking, &q.relevant),
        rr: reciprocal_rank(ranking, &q.relevant),
        p1: p_at_1(ranking, &q.relevant),
        pairs,
        latency: trace.latency.total,
        answered_by: trace.answered_by.clone(),
        repeated,
        relevant_in_candidates,
        parse_failure: trace.parse_failure,
        degradations: trace.degradations.clone(),
        error,
    }
}

/// Runs the pipeline over every user's test queries, users in parallel on
/// `opts.jobs` threads. Rows come back in input order.
pub fn evaluate_run(pipeline: &Pipeline, users: &[EvalUser], opts: &EvalOptions) -> Result<RunOutput> {
    let per_user: Vec<(Vec<QueryRow>, Vec<QueryTrace>)> = with_jobs(opts.jobs, || {
        users
            .par_iter()
            .map(|u| {
                let mut state = u.state.clone();
                let outcomes = pipeline.run_user(&mut state, &u.queries);
                let rows = outcomes
                    .iter()
                    .zip(&u.queries)
                    .enumerate()
                    .map(|(i, (o, q))| score_query(q, &o.trace, u.repeated.get(i).copied().unwrap_or(false)))
                    .collect();
                (rows, outcomes.into_iter().map(|o| o.trace).collect())
            })
            .collect()
    })?;
    let mut out = RunOutput {
        rows: vec![],
        traces: vec![],
    };
    for (rows, traces) in per_user {
        out.rows.extend(rows);
        out.traces.extend(traces);
    }
    Ok(out)
}

/// Scores the engine's own candidate order, untouched.
pub fn original_order(users: &[EvalUser]) -> RunOutput {
    let mut out = RunOutput {
        rows: vec![],
        traces: vec![],
    };
    for u in users {
        for (i, q) in u.queries.iter().enumerate() {
            let mut trace = QueryTrace::new(q);
            trace.answered_by = "original".into();
            trace.final_ranking = q.candidate_ids();
            out.rows.push(score_query(q, &trace, u.repeated.get(i).copied().unwrap_or(false)));
            out.traces.push(trace);
        }
    }
    out
}

/// True when the normalized query text appears among the history's queries.
pub fn is_repeated(query: &str, history_queries: &HashSet<String>) -> bool {
    history_queries.contains(&normalize_query(query))
}

pub fn history_queries(history: &UserHistory) -> HashSet<String> {
    history.interactions().map(|i| normalize_query(&i.query)).collect()
}

/// Indices of repeated and non-repeated test queries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepeatedSplit {
    pub repeated: Vec<usize>,
    pub non_repeated: Vec<usize>,
}

/// Partitions `queries` by whether each repeats its user's history. Users
/// without a history have no repeated queries.
pub fn split_repeated(queries: &[TestQuery], histories: &[UserHistory]) -> RepeatedSplit {
    let by_user: std::collections::HashMap<&str, HashSet<String>> = histories
        .iter()
        .map(|h| (h.user_id.as_str(), history_queries(h)))
        .collect();
    let empty = HashSet::new();
    let mut split = RepeatedSplit::default();
    for (i, q) in queries.iter().enumerate() {
        let hq = by_user.get(q.user_id.as_str()).unwrap_or(&empty);
        if is_repeated(&q.query, hq) {
            split.repeated.push(i);
        } else {
            split.non_repeated.push(i);
        }
    }
    split
}

/// Builds every user's memory in parallel. Meters are merged in user order.
pub fn build_states(pipeline: &Pipeline, histories: &[UserHistory], jobs: usize) -> Result<(Vec<UserState>, Meter)> {
    let built: Vec<(UserState, Meter)> = with_jobs(jobs, || {
        histories
            .par_iter()
            .map(|h| {
                let mut m = Meter::new();
                let s = pipeline.build_state(h, &mut m);
                (s, m)
            })
            .collect()
    })?;
    let mut meter = Meter::new();
    let states = built
        .into_iter()
        .map(|(s, m)| {
            meter.absorb(m);
            s
        })
        .collect();
    Ok((states, meter))
}

/// The five memory configurations of the ablation, full configuration last.
pub fn ablation_configs(base: &PipelineConfig) -> Vec<(&'static str, PipelineConfig)> {
    let full = PipelineConfig {
        sensory: true,
        working: true,
        longterm_explicit: true,
        longterm_implicit: true,
        ..base.clone()
    };
    vec![
        ("sensory-off", PipelineConfig { sensory: false, ..full.clone() }),
        ("working-off", PipelineConfig { working: false, ..full.clone() }),
        ("longE-off", PipelineConfig { longterm_explicit: false, ..full.clone() }),
        ("longI-off", PipelineConfig { longterm_implicit: false, ..full.clone() }),
        ("full", full),
    ]
}

/// Evaluates each ablation configuration on the same memory and queries.
pub fn ablation_suite(pipeline: &Pipeline, users: &[EvalUser], opts: &EvalOptions) -> Result<AblationTable> {
    let mut runs = Vec::new();
    for (name, cfg) in ablation_configs(pipeline.config()) {
        let p = pipeline.reconfigured(cfg.clone());
        let out = evaluate_run(&p, users, opts)?;
        runs.push((name, cfg, out.report(name, opts)));
    }
    let full = runs.last().expect("five configurations").2.clone();
    let rows = runs
        .into_iter()
        .map(|(name, cfg, report)| AblationRow::new(name, &cfg, report, &full))
        .collect();
    Ok(AblationTable { rows })
}

/// Interactions kept when retaining `fraction` of the most recent history.
pub fn history_keep(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// `0.1, 0.2, ..., 1.0`.
pub fn default_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// A user's full history and test queries, for sweeps that rebuild memory.
#[derive(Debug, Clone)]
pub struct SweepUser {
    pub history: UserHistory,
    pub queries: Vec<TestQuery>,
    pub repeated: Vec<bool>,
}

/// For each fraction, rebuilds memory from the most recent share of every
/// user's history and evaluates.
pub fn history_sweep(
    pipeline: &Pipeline,
    fractions: &[f64],
    users: &[SweepUser],
    opts: &EvalOptions,
) -> Result<Vec<CurvePoint>> {
    let mut points = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("sweep fraction {f} is outside (0, 1]")));
        }
        let trimmed: Vec<UserHistory> = users
            .iter()
            .map(|u| u.history.most_recent(history_keep(u.history.len(), f)))
            .collect();
        let kept = trimmed.iter().map(UserHistory::len).sum();
        let (states, _) = build_states(pipeline, &trimmed, opts.jobs)?;
        let eval_users: Vec<EvalUser> = states
            .into_iter()
            .zip(users)
            .map(|(state, u)| EvalUser {
                state,
                queries: u.queries.clone(),
                repeated: u.repeated.clone(),
            })
            .collect();
        let out = evaluate_run(pipeline, &eval_users, opts)?;
        points.push(CurvePoint {
            fraction: f,
            kept_interactions: kept,
            report: out.report(&format!("{:.0}%", f * 100.0), opts),
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cognition::{CognitiveUnit, MockProvider, ProviderConfig};
    use crate::log::{DocumentRef, Interaction};
    use crate::ranking::RankerKind;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn click(q: &str, ts: i64, doc: &str) -> Interaction {
        Interaction {
            query: q.into(),
            timestamp: ts,
            session_id: format!("s{}", ts / 10),
            clicked: vec![doc.into()],
            skipped: vec![],
        }
    }

    fn tq(user: &str, q: &str, ts: i64, cands: &[&str], relevant: &str) -> TestQuery {
        TestQuery {
            user_id: user.into(),
            session_id: "t".into(),
            query: q.into(),
            timestamp: ts,
            candidates: cands.iter().map(|d| DocumentRef::new(*d, format!("about {d}"), "")).collect(),
            relevant: BTreeSet::from([relevant.to_string()]),
            skipped: vec![],
        }
    }

    fn pipeline(ranker: RankerKind) -> Pipeline {
        let unit = CognitiveUnit::new(Arc::new(MockProvider::echo()), ProviderConfig::default());
        Pipeline::new(unit, PipelineConfig { ranker, ..PipelineConfig::default() })
    }

    fn users(p: &Pipeline) -> (Vec<UserHistory>, Vec<EvalUser>) {
        let h1 = UserHistory::from_interactions("u1", vec![click("shoes", 1, "d2"), click("hats", 2, "d1")], None);
        let h2 = UserHistory::from_interactions("u2", vec![click("cats", 1, "d3")], None);
        let q1 = vec![tq("u1", "Shoes", 100, &["d1", "d2"], "d2"), tq("u1", "fresh", 101, &["d1", "d2"], "d1")];
        let q2 = vec![tq("u2", "dogs", 100, &["d3", "d4"], "d4")];
        let hs = vec![h1, h2];
        let (states, _) = build_states(p, &hs, 2).unwrap();
        let all: Vec<TestQuery> = q1.iter().chain(&q2).cloned().collect();
        let split = split_repeated(&all, &hs);
        let flags: Vec<bool> = (0..all.len()).map(|i| split.repeated.contains(&i)).collect();
        let eu = vec![
            EvalUser { state: states[0].clone(), queries: q1, repeated: flags[..2].to_vec() },
            EvalUser { state: states[1].clone(), queries: q2, repeated: flags[2..].to_vec() },
        ];
        (hs, eu)
    }

    #[test]
    fn run_rows_and_report() {
        let p = pipeline(RankerKind::Llm);
        let (_, eu) = users(&p);
        let out = evaluate_run(&p, &eu, &EvalOptions::default()).unwrap();
        assert_eq!(out.rows.len(), 3);
        assert_eq!(out.rows[0].answered_by, "sensory");
        assert_eq!(out.rows[0].ap, 1.0);
        assert!(out.rows[0].repeated && !out.rows[1].repeated);
        // echo ranking keeps the original order: AP 1, then AP 0.5
        assert_eq!(out.rows[1].ap, 1.0);
        assert_eq!(out.rows[2].ap, 0.5);
        let r = out.report("x", &EvalOptions::default());
        assert!((r.map - 2.5 / 3.0).abs() < 1e-12);
        assert_eq!(r.sensory_answered, 1);
        let parallel = evaluate_run(&p, &eu, &EvalOptions { jobs: 4, ..EvalOptions::default() }).unwrap();
        assert_eq!(parallel, out);
    }

    #[test]
    fn original_order_scores_the_candidates_as_given() {
        let p = pipeline(RankerKind::Llm);
        let (_, eu) = users(&p);
        let out = original_order(&eu);
        let aps: Vec<f64> = out.rows.iter().map(|r| r.ap).collect();
        assert_eq!(aps, vec![0.5, 1.0, 0.5]);
        assert!(out.rows.iter().all(|r| r.pairs.improved == 0 && r.answered_by == "original"));
    }

    #[test]
    fn repeated_split_is_a_partition() {
        let hs = vec![UserHistory::from_interactions("u", vec![click("Red Shoes!", 1, "d")], None)];
        let qs = vec![tq("u", "red shoes", 5, &["d"], "d"), tq("u", "blue", 6, &["d"], "d"), tq("v", "red shoes", 5, &["d"], "d")];
        let s = split_repeated(&qs, &hs);
        assert_eq!(s.repeated, vec![0]);
        assert_eq!(s.non_repeated, vec![1, 2]);
    }

    #[test]
    fn ablation_has_five_rows_and_a_zero_full_delta() {
        let p = pipeline(RankerKind::Llm);
        let (_, eu) = users(&p);
        let t = ablation_suite(&p, &eu, &EvalOptions::default()).unwrap();
        assert_eq!(t.rows.len(), 5);
        let full = t.rows.last().unwrap();
        assert_eq!(full.map_delta_pct, 0.0);
        assert_eq!(t.rows[0].report.sensory_answered, 0);
        assert!(t.rows[0].report.latency_mean >= full.report.latency_mean);
    }

    #[test]
    fn keep_counts() {
        assert_eq!(history_keep(100, 0.1), 10);
        assert_eq!(history_keep(100, 1.0), 100);
        assert_eq!(history_keep(7, 0.5), 4);
        assert_eq!(history_keep(0, 0.5), 0);
    }

    #[test]
    fn sweep_at_full_history_equals_the_plain_run() {
        let p = pipeline(RankerKind::Llm);
        let (hs, eu) = users(&p);
        let su: Vec<SweepUser> = hs
            .iter()
            .zip(&eu)
            .map(|(h, e)| SweepUser { history: h.clone(), queries: e.queries.clone(), repeated: e.repeated.clone() })
            .collect();
        let curve = history_sweep(&p, &[0.5, 1.0], &su, &EvalOptions::default()).unwrap();
        assert_eq!(curve.len(), 2);
        let plain = evaluate_run(&p, &eu, &EvalOptions::default()).unwrap().report("100%", &EvalOptions::default());
        assert_eq!(curve[1].report, plain);
        assert!(history_sweep(&p, &[0.0], &su, &EvalOptions::default()).is_err());
    }
}

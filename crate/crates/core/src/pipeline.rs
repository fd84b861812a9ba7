//! Per-query orchestration: sensory probe, working-memory assembly and user
//! modeling, then the selected ranker. Every step is recorded in a
//! [`QueryTrace`].

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cognition::{CognitiveUnit, Meter};
use crate::error::{Error, Result};
use crate::log::{Session, TestQuery, UserHistory, DEFAULT_SPLIT_FRACTION};
use crate::longterm::{LongTermStore, RetrievalMode, WindowMode, DEFAULT_LEXICAL_K, DEFAULT_WINDOW};
use crate::ranking::{
    llm_rank, pclick_rank, term_rank, Bm25Params, LlmRankOptions, PClickParams, RankedResult,
    RankerKind, VectorScorer, DEFAULT_CANDIDATES,
};
use crate::sensory::{SensoryStore, NO_REFINDING};
use crate::working::{assemble, model_user, AssembleOptions, Toggles, WorkingContext, DEFAULT_RECENT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub sensory: bool,
    pub working: bool,
    pub longterm_explicit: bool,
    pub longterm_implicit: bool,
    pub ranker: RankerKind,
    /// Recent short-term interactions shown to user modeling.
    pub recent: usize,
    pub window_size: u64,
    pub window_mode: WindowMode,
    pub retrieval: RetrievalMode,
    pub lexical_k: usize,
    pub rank_window: usize,
    pub rank_stride: usize,
    pub snippet_chars: usize,
    /// Fold each finished test-period session into memory before the next.
    pub progressive: bool,
    pub vector_endpoint: Option<String>,
    pub vector_timeout_secs: u64,
    pub candidate_k: usize,
    pub inject: bool,
    pub split_fraction: f64,
    pub pclick_beta: f64,
    pub pclick_lambda: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let rank = LlmRankOptions::default();
        let pclick = PClickParams::default();
        Self {
            sensory: true,
            working: true,
            longterm_explicit: true,
            longterm_implicit: true,
            ranker: RankerKind::Llm,
            recent: DEFAULT_RECENT,
            window_size: DEFAULT_WINDOW,
            window_mode: WindowMode::Interactions,
            retrieval: RetrievalMode::Llm,
            lexical_k: DEFAULT_LEXICAL_K,
            rank_window: rank.window,
            rank_stride: rank.stride,
            snippet_chars: rank.snippet_chars,
            progressive: false,
            vector_endpoint: None,
            vector_timeout_secs: 30,
            candidate_k: DEFAULT_CANDIDATES,
            inject: true,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            pclick_beta: pclick.beta,
            pclick_lambda: pclick.lambda,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.window_size == 0 {
            return bad("pipeline.window_size must be at least 1");
        }
        if self.rank_window < 2 {
            return bad("pipeline.rank_window must be at least 2");
        }
        if self.rank_stride == 0 || self.rank_stride >= self.rank_window {
            return bad("pipeline.rank_stride must be in [1, rank_window)");
        }
        if self.candidate_k == 0 {
            return bad("pipeline.candidate_k must be at least 1");
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad("pipeline.split_fraction must be in (0, 1)");
        }
        if self.pclick_beta <= 0.0 {
            return bad("pipeline.pclick_beta must be positive");
        }
        Ok(())
    }

    /// Every memory unit off.
    pub fn all_off(mut self) -> Self {
        self.sensory = false;
        self.working = false;
        self.longterm_explicit = false;
        self.longterm_implicit = false;
        self
    }

    fn toggles(&self) -> Toggles {
        Toggles {
            rewrite: self.working,
            recent: self.working,
            retrieve_explicit: self.longterm_explicit,
            retrieve_implicit: self.longterm_implicit,
        }
    }

    fn rank_options(&self) -> LlmRankOptions {
        LlmRankOptions {
            window: self.rank_window,
            stride: self.rank_stride,
            snippet_chars: self.snippet_chars,
        }
    }
}

/// Memory of one user at query time.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub user_id: String,
    pub sensory: SensoryStore,
    pub longterm: LongTermStore,
    /// Session in progress (H^s).
    pub short_term: Session,
}

impl UserState {
    /// Builds both stores from `history`, encoding long-term memory.
    pub fn build(
        unit: &CognitiveUnit,
        history: &UserHistory,
        config: &PipelineConfig,
        titles: &HashMap<String, String>,
        meter: &mut Meter,
    ) -> Self {
        Self {
            user_id: history.user_id.clone(),
            sensory: SensoryStore::build(history),
            longterm: LongTermStore::build(unit, history, config.window_size, config.window_mode, titles, meter),
            short_term: history.short_term.clone(),
        }
    }

    pub fn from_parts(sensory: SensoryStore, longterm: LongTermStore, short_term: Session) -> Self {
        Self {
            user_id: sensory.user_id.clone(),
            sensory,
            longterm,
            short_term,
        }
    }
}

/// Model latency in seconds, per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub sensory: f64,
    /// Rewrite plus long-term retrieval.
    pub context: f64,
    pub user_model: f64,
    pub rank: f64,
    pub total: f64,
}

/// What happened to one query. Optional fields are present iff the stage ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub user_id: String,
    pub query: String,
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensory_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_explicit: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_implicit: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_model: Option<String>,
    /// `sensory` or the ranker that produced the final order.
    pub answered_by: String,
    pub final_ranking: Vec<String>,
    pub latency: StageLatency,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degradations: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failure: bool,
    pub provider_calls: usize,
}

impl QueryTrace {
    /// An empty trace for `q`.
    pub fn new(q: &TestQuery) -> Self {
        Self {
            user_id: q.user_id.clone(),
            query: q.query.clone(),
            timestamp: q.timestamp,
            sensory_response: None,
            rewritten_query: None,
            retrieved_explicit: None,
            retrieved_implicit: None,
            user_model: None,
            answered_by: String::new(),
            final_ranking: vec![],
            latency: StageLatency::default(),
            degradations: vec![],
            parse_failure: false,
            provider_calls: 0,
        }
    }

    pub fn answered_by_sensory(&self) -> bool {
        self.answered_by == "sensory"
    }

    fn absorb(&mut self, meter: &Meter) {
        self.provider_calls += meter.calls;
        for d in &meter.degradations {
            if !self.degradations.contains(d) {
                self.degradations.push(d.clone());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub ranking: RankedResult,
    pub trace: QueryTrace,
}

/// The configured pipeline: a cognitive unit, the toggles, and shared data.
#[derive(Clone)]
pub struct Pipeline {
    unit: CognitiveUnit,
    config: PipelineConfig,
    titles: Arc<HashMap<String, String>>,
    vector: Option<Arc<VectorScorer>>,
}

impl Pipeline {
    pub fn new(unit: CognitiveUnit, config: PipelineConfig) -> Self {
        let vector = VectorScorer::from_env(config.vector_endpoint.as_deref(), config.vector_timeout_secs).map(Arc::new);
        Self {
            unit,
            config,
            titles: Arc::new(HashMap::new()),
            vector,
        }
    }

    /// doc_id -> title map used when rendering interactions.
    pub fn with_titles(mut self, titles: Arc<HashMap<String, String>>) -> Self {
        self.titles = titles;
        self
    }

    /// Same unit and data under a different configuration.
    pub fn reconfigured(&self, config: PipelineConfig) -> Self {
        let mut p = Self::new(self.unit.clone(), config);
        p.titles = self.titles.clone();
        p
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn unit(&self) -> &CognitiveUnit {
        &self.unit
    }

    pub fn titles(&self) -> &HashMap<String, String> {
        &self.titles
    }

    pub fn build_state(&self, history: &UserHistory, meter: &mut Meter) -> UserState {
        UserState::build(&self.unit, history, &self.config, &self.titles, meter)
    }

    /// Ranks the candidates of one test query.
    pub fn handle_query(&self, state: &UserState, q: &TestQuery) -> QueryOutcome {
        let cfg = &self.config;
        let mut trace = QueryTrace::new(q);
        let ids = q.candidate_ids();

        if cfg.sensory {
            match state.sensory.probe(&q.query, &ids) {
                Some(resp) => {
                    trace.sensory_response = Some(format!("Re-finding match: {}", resp.ranking[0]));
                    trace.answered_by = "sensory".into();
                    trace.final_ranking = resp.ranking.clone();
                    let ranking = RankedResult::from_order("sensory", resp.ranking);
                    return QueryOutcome { ranking, trace };
                }
                None => trace.sensory_response = Some(NO_REFINDING.to_string()),
            }
        }

        // user modeling runs whenever working or long-term memory contributes
        let toggles = cfg.toggles();
        let needs_model = cfg.working || cfg.longterm_explicit || cfg.longterm_implicit;
        let mut context_meter = Meter::new();
        let mut model_meter = Meter::new();
        let (ctx, user_model) = if needs_model {
            let opts = AssembleOptions {
                recent: cfg.recent,
                retrieval: cfg.retrieval,
                lexical_k: cfg.lexical_k,
            };
            let ctx = assemble(
                &self.unit,
                &q.query,
                &state.short_term,
                Some(&state.longterm),
                toggles,
                &opts,
                &mut context_meter,
            );
            let u = model_user(&self.unit, &ctx, &self.titles, &mut model_meter);
            (ctx, u)
        } else {
            (WorkingContext::bare(&q.query), q.query.clone())
        };
        if cfg.working {
            trace.rewritten_query = Some(ctx.rewritten_query.clone());
        }
        if cfg.longterm_explicit {
            trace.retrieved_explicit = Some(ctx.interests.clone());
        }
        if cfg.longterm_implicit {
            trace.retrieved_implicit = Some(ctx.background.clone());
        }
        if needs_model {
            trace.user_model = Some(user_model.clone());
        }

        let mut rank_meter = Meter::new();
        let ranking = self.rank(state, q, &user_model, &mut rank_meter);
        trace.answered_by = ranking.ranker.clone();
        trace.final_ranking = ranking.ids();
        trace.parse_failure = ranking.parse_failure;
        for m in [&context_meter, &model_meter, &rank_meter] {
            trace.absorb(m);
        }
        trace.latency = StageLatency {
            sensory: 0.0,
            context: context_meter.latency,
            user_model: model_meter.latency,
            rank: rank_meter.latency,
            total: context_meter.latency + model_meter.latency + rank_meter.latency,
        };
        QueryOutcome { ranking, trace }
    }

    fn rank(&self, state: &UserState, q: &TestQuery, user_model: &str, meter: &mut Meter) -> RankedResult {
        let cfg = &self.config;
        match cfg.ranker {
            RankerKind::Term => term_rank(user_model, &q.candidates, Bm25Params::default()),
            RankerKind::Llm => llm_rank(&self.unit, &q.query, user_model, &q.candidates, &cfg.rank_options(), meter),
            RankerKind::Pclick => pclick_rank(
                &state.sensory,
                &q.query,
                &q.candidate_ids(),
                PClickParams {
                    beta: cfg.pclick_beta,
                    lambda: cfg.pclick_lambda,
                },
            ),
            RankerKind::Vector => {
                let outcome = match &self.vector {
                    Some(v) => v.rank(user_model, &q.candidates),
                    None => Err(Error::RankerUnavailable("no vector endpoint configured".into())),
                };
                outcome.unwrap_or_else(|err| {
                    log::warn!("{err}; falling back to the term ranker");
                    meter.degrade("ranker");
                    let mut r = term_rank(user_model, &q.candidates, Bm25Params::default());
                    r.degraded = true;
                    r
                })
            }
        }
    }

    /// Folds a finished session into sensory and long-term memory and clears
    /// the short-term session.
    pub fn end_of_session(&self, state: &mut UserState, session: &Session, meter: &mut Meter) {
        state.sensory.update(session);
        state.longterm.append_session(&self.unit, session, &self.titles, meter);
        state.short_term = Session::default();
    }

    /// Handles one user's test queries in time order. Each query joins the
    /// short-term session once answered; a session change starts a fresh
    /// one, folding the finished session into memory in progressive mode.
    pub fn run_user(&self, state: &mut UserState, queries: &[TestQuery]) -> Vec<QueryOutcome> {
        let mut out = Vec::with_capacity(queries.len());
        for q in queries {
            if state.short_term.session_id != q.session_id || q.session_id.is_empty() {
                let finished = std::mem::take(&mut state.short_term);
                if self.config.progressive && !finished.is_empty() {
                    self.end_of_session(state, &finished, &mut Meter::new());
                }
                state.short_term = Session {
                    session_id: q.session_id.clone(),
                    interactions: vec![],
                };
            }
            out.push(self.handle_query(state, q));
            state.short_term.interactions.push(q.as_interaction());
        }
        out
    }
}

//! Long-term memory: the long-term history cut into slots, each encoded by
//! the model into explicit (topic -> interests) and implicit
//! (attribute -> value) entries.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cognition::{
    fit_sections, parse_attributes, parse_retrieved_items, parse_topics, CognitiveUnit,
    ExplicitEntry, ImplicitEntry, Meter, PromptFamily,
};
use crate::error::{Error, Result};
use crate::log::{Interaction, Session, UserHistory};
use crate::ranking::{Bm25Params, CorpusStats, DocTerms};
use crate::text::tokenize;

/// Interactions per slot.
pub const DEFAULT_WINDOW: u64 = 50;
/// Slot length in seconds when windows are wall-clock intervals.
pub const DEFAULT_WINDOW_SECS: u64 = 7 * 24 * 3600;
/// Entries kept per kind by lexical retrieval.
pub const DEFAULT_LEXICAL_K: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// `window_size` counts interactions.
    #[default]
    Interactions,
    /// `window_size` counts seconds from the slot's first interaction.
    Seconds,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Llm,
    Lexical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryKind {
    Explicit,
    Implicit,
}

impl MemoryKind {
    fn family(self) -> PromptFamily {
        match self {
            MemoryKind::Explicit => PromptFamily::SummarizeExplicit,
            MemoryKind::Implicit => PromptFamily::SummarizeImplicit,
        }
    }

    fn label(self) -> &'static str {
        match self {
            MemoryKind::Explicit => "Explicit",
            MemoryKind::Implicit => "Implicit",
        }
    }

    fn target(self) -> &'static str {
        match self {
            MemoryKind::Explicit => "interests",
            MemoryKind::Implicit => "backgrounds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySlot {
    pub index: usize,
    pub start_ts: i64,
    pub end_ts: i64,
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub explicit: Vec<ExplicitEntry>,
    #[serde(default)]
    pub implicit: Vec<ImplicitEntry>,
    /// Explicit-encoding reply before parsing.
    #[serde(default)]
    pub raw_summary: String,
    #[serde(default)]
    pub raw_implicit: String,
    #[serde(default)]
    pub encoded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MemorySlot {
    fn new(index: usize, interactions: Vec<Interaction>) -> Self {
        let mut slot = Self {
            index,
            start_ts: 0,
            end_ts: 0,
            interactions,
            explicit: vec![],
            implicit: vec![],
            raw_summary: String::new(),
            raw_implicit: String::new(),
            encoded: false,
            error: None,
        };
        slot.refresh_bounds();
        slot
    }

    fn refresh_bounds(&mut self) {
        self.start_ts = self.interactions.first().map_or(0, |i| i.timestamp);
        self.end_ts = self.interactions.last().map_or(0, |i| i.timestamp);
    }

    fn entries(&self, kind: MemoryKind) -> Vec<String> {
        match kind {
            MemoryKind::Explicit => self.explicit.iter().map(ExplicitEntry::render).collect(),
            MemoryKind::Implicit => self.implicit.iter().map(ImplicitEntry::render).collect(),
        }
    }

    fn clear_encoding(&mut self) {
        self.explicit.clear();
        self.implicit.clear();
        self.raw_summary.clear();
        self.raw_implicit.clear();
        self.encoded = false;
        self.error = None;
    }
}

/// Chunks time-ordered interactions into slots.
pub fn partition_windows(interactions: &[Interaction], window_size: u64, mode: WindowMode) -> Vec<MemorySlot> {
    let window_size = window_size.max(1);
    let mut groups: Vec<Vec<Interaction>> = Vec::new();
    for it in interactions {
        let start_new = match groups.last() {
            None => true,
            Some(g) => match mode {
                WindowMode::Interactions => g.len() as u64 >= window_size,
                WindowMode::Seconds => it.timestamp.saturating_sub(g[0].timestamp) >= window_size as i64,
            },
        };
        if start_new {
            groups.push(Vec::new());
        }
        groups.last_mut().expect("just pushed").push(it.clone());
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| MemorySlot::new(i, g))
        .collect()
}

fn title_of<'a>(titles: &'a HashMap<String, String>, doc_id: &'a str) -> &'a str {
    titles.get(doc_id).map(String::as_str).filter(|t| !t.is_empty()).unwrap_or(doc_id)
}

/// `- query | clicked: t1; t2 | skipped: t3`, one line per interaction.
pub fn render_interactions(interactions: &[Interaction], titles: &HashMap<String, String>) -> String {
    interactions
        .iter()
        .map(|it| {
            let mut line = format!("- {}", it.query);
            if !it.clicked.is_empty() {
                let t: Vec<&str> = it.clicked.iter().map(|d| title_of(titles, d)).collect();
                line.push_str(&format!(" | clicked: {}", t.join("; ")));
            }
            if !it.skipped.is_empty() {
                let t: Vec<&str> = it.skipped.iter().map(|d| title_of(titles, d)).collect();
                line.push_str(&format!(" | skipped: {}", t.join("; ")));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Encodes one slot into both kinds of entries. A provider failure leaves
/// the slot unencoded with the error recorded; an unparseable reply leaves
/// the entries empty but keeps the raw text.
pub fn encode_slot(unit: &CognitiveUnit, slot: &mut MemorySlot, titles: &HashMap<String, String>, meter: &mut Meter) {
    slot.clear_encoding();
    if slot.interactions.is_empty() {
        return;
    }
    let rendered = render_interactions(&slot.interactions, titles);
    let mut errors = Vec::new();
    for kind in [MemoryKind::Explicit, MemoryKind::Implicit] {
        let family = kind.family();
        let demos = unit.templates().demonstrations(family);
        let prompt = fit_sections(
            unit,
            family,
            &[("demonstrations", &demos)],
            &[("interactions", rendered.clone())],
            meter,
        );
        match unit.complete(family, &prompt, meter) {
            Ok(reply) => match kind {
                MemoryKind::Explicit => {
                    slot.explicit = parse_topics(&reply.text);
                    slot.raw_summary = reply.text;
                }
                MemoryKind::Implicit => {
                    slot.implicit = parse_attributes(&reply.text);
                    slot.raw_implicit = reply.text;
                }
            },
            Err(err) => errors.push(format!("{}: {err}", family.name())),
        }
    }
    if errors.is_empty() {
        slot.encoded = true;
    } else {
        log::warn!("slot {} left unencoded: {}", slot.index, errors.join("; "));
        meter.degrade("encode");
        slot.error = Some(errors.join("; "));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedProfile {
    pub interests: Vec<String>,
    pub background: Vec<String>,
}

impl RetrievedProfile {
    pub fn is_empty(&self) -> bool {
        self.interests.is_empty() && self.background.is_empty()
    }
}

/// Which kinds of long-term memory to consult.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KindToggles {
    pub explicit: bool,
    pub implicit: bool,
}

impl Default for KindToggles {
    fn default() -> Self {
        Self {
            explicit: true,
            implicit: true,
        }
    }
}

fn dedup(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items.into_iter().filter(|s| seen.insert(s.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermStore {
    pub user_id: String,
    pub window_size: u64,
    #[serde(default)]
    pub window_mode: WindowMode,
    pub slots: Vec<MemorySlot>,
}

impl LongTermStore {
    pub fn new(user_id: impl Into<String>, window_size: u64, window_mode: WindowMode) -> Self {
        Self {
            user_id: user_id.into(),
            window_size: window_size.max(1),
            window_mode,
            slots: Vec::new(),
        }
    }

    /// Partitions the long-term part of `history` without encoding it.
    pub fn partition(history: &UserHistory, window_size: u64, window_mode: WindowMode) -> Self {
        let its: Vec<Interaction> = history.long_term_interactions().cloned().collect();
        Self {
            slots: partition_windows(&its, window_size, window_mode),
            ..Self::new(history.user_id.clone(), window_size, window_mode)
        }
    }

    /// Partitions and encodes the long-term history.
    pub fn build(
        unit: &CognitiveUnit,
        history: &UserHistory,
        window_size: u64,
        window_mode: WindowMode,
        titles: &HashMap<String, String>,
        meter: &mut Meter,
    ) -> Self {
        let mut store = Self::partition(history, window_size, window_mode);
        store.encode_all(unit, titles, meter);
        store
    }

    /// Encodes every slot, slots in parallel.
    pub fn encode_all(&mut self, unit: &CognitiveUnit, titles: &HashMap<String, String>, meter: &mut Meter) {
        let meters: Vec<Meter> = self
            .slots
            .par_iter_mut()
            .map(|slot| {
                let mut m = Meter::new();
                encode_slot(unit, slot, titles, &mut m);
                m
            })
            .collect();
        for m in meters {
            meter.absorb(m);
        }
    }

    pub fn entry_count(&self) -> usize {
        self.slots.iter().map(|s| s.explicit.len() + s.implicit.len()).sum()
    }

    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.slots.iter().flat_map(|s| s.interactions.iter())
    }

    /// Adds a finished session: the last slot is filled first, then new slots
    /// are opened. Every touched slot is re-encoded.
    pub fn append_session(
        &mut self,
        unit: &CognitiveUnit,
        session: &Session,
        titles: &HashMap<String, String>,
        meter: &mut Meter,
    ) {
        if session.is_empty() {
            return;
        }
        let first_touched = match self.slots.last() {
            Some(last) if !self.slot_full(last, &session.interactions[0]) => last.index,
            _ => self.slots.len(),
        };
        for it in &session.interactions {
            let fits = self.slots.last().is_some_and(|last| !self.slot_full(last, it));
            if !fits {
                let index = self.slots.len();
                self.slots.push(MemorySlot::new(index, Vec::new()));
            }
            let last = self.slots.last_mut().expect("non-empty");
            last.interactions.push(it.clone());
            last.refresh_bounds();
        }
        let metered: Vec<Meter> = self.slots[first_touched..]
            .par_iter_mut()
            .map(|slot| {
                let mut m = Meter::new();
                encode_slot(unit, slot, titles, &mut m);
                m
            })
            .collect();
        for m in metered {
            meter.absorb(m);
        }
    }

    fn slot_full(&self, slot: &MemorySlot, next: &Interaction) -> bool {
        match self.window_mode {
            WindowMode::Interactions => slot.interactions.len() as u64 >= self.window_size,
            WindowMode::Seconds => {
                !slot.interactions.is_empty()
                    && next.timestamp.saturating_sub(slot.start_ts) >= self.window_size as i64
            }
        }
    }

    /// Pulls the entries relevant to `query` out of memory.
    ///
    /// In LLM mode each non-empty slot is asked once per enabled kind. When
    /// every call fails the lexical mode answers instead.
    pub fn retrieve_profile(
        &self,
        unit: &CognitiveUnit,
        query: &str,
        mode: RetrievalMode,
        kinds: KindToggles,
        lexical_k: usize,
        meter: &mut Meter,
    ) -> RetrievedProfile {
        if mode == RetrievalMode::Lexical {
            return self.retrieve_lexical(query, kinds, lexical_k);
        }
        let mut tasks: Vec<(MemoryKind, &MemorySlot)> = Vec::new();
        for slot in &self.slots {
            for (on, kind) in [(kinds.explicit, MemoryKind::Explicit), (kinds.implicit, MemoryKind::Implicit)] {
                if on && !slot.entries(kind).is_empty() {
                    tasks.push((kind, slot));
                }
            }
        }
        if tasks.is_empty() {
            return RetrievedProfile::default();
        }
        let outcomes: Vec<(MemoryKind, Option<Vec<String>>, Meter)> = tasks
            .par_iter()
            .map(|&(kind, slot)| {
                let mut m = Meter::new();
                let memory = slot
                    .entries(kind)
                    .iter()
                    .map(|e| format!("- {e}"))
                    .collect::<Vec<_>>()
                    .join("\n");
                let prompt = fit_sections(
                    unit,
                    PromptFamily::Retrieve,
                    &[("memory_kind", kind.label()), ("query", query), ("target", kind.target())],
                    &[("memory", memory)],
                    &mut m,
                );
                let items = match unit.complete(PromptFamily::Retrieve, &prompt, &mut m) {
                    Ok(reply) => Some(parse_retrieved_items(&reply.text)),
                    Err(err) => {
                        log::debug!("retrieval from slot {} failed: {err}", slot.index);
                        None
                    }
                };
                (kind, items, m)
            })
            .collect();

        let mut interests = Vec::new();
        let mut background = Vec::new();
        let mut failures = 0;
        for (kind, items, m) in outcomes {
            meter.absorb(m);
            match (items, kind) {
                (None, _) => failures += 1,
                (Some(v), MemoryKind::Explicit) => interests.extend(v),
                (Some(v), MemoryKind::Implicit) => background.extend(v),
            }
        }
        if failures == tasks.len() {
            log::warn!("all retrieval calls failed for user {}; using lexical retrieval", self.user_id);
            meter.degrade("retrieve");
            return self.retrieve_lexical(query, kinds, lexical_k);
        }
        if failures > 0 {
            meter.degrade("retrieve");
        }
        RetrievedProfile {
            interests: dedup(interests),
            background: dedup(background),
        }
    }

    /// BM25 of the query against each stored entry; the top `k` entries with
    /// a positive score are kept per kind, in slot order.
    pub fn retrieve_lexical(&self, query: &str, kinds: KindToggles, k: usize) -> RetrievedProfile {
        let pick = |kind: MemoryKind| -> Vec<String> {
            let entries = dedup(self.slots.iter().flat_map(|s| s.entries(kind)));
            if entries.is_empty() {
                return vec![];
            }
            let docs: Vec<DocTerms> = entries.iter().map(|e| DocTerms::from_text(e)).collect();
            let stats = CorpusStats::from_docs(&docs);
            let terms = tokenize(query);
            let scores: Vec<f64> = docs.iter().map(|d| stats.score(&terms, d, Bm25Params::default())).collect();
            let mut idx: Vec<usize> = (0..entries.len()).filter(|&i| scores[i] > 0.0).collect();
            idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx.sort_unstable();
            idx.into_iter().map(|i| entries[i].clone()).collect()
        };
        RetrievedProfile {
            interests: if kinds.explicit { pick(MemoryKind::Explicit) } else { vec![] },
            background: if kinds.implicit { pick(MemoryKind::Implicit) } else { vec![] },
        }
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, &e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path, &e))
    }
}

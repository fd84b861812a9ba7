//! Sensory memory: click frequencies per normalized query, used to answer
//! re-finding queries without touching the language model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{Session, UserHistory};
use crate::text::normalize_query;

/// Shown in traces when the probe finds nothing to answer with.
pub const NO_REFINDING: &str = "No re-finding data found";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensoryStore {
    pub user_id: String,
    /// normalized query -> doc_id -> click count
    pub entries: BTreeMap<String, BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensoryResponse {
    pub matched: bool,
    pub ranking: Vec<String>,
}

impl SensoryStore {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Counts every (query, clicked doc) pair in the user's history.
    pub fn build(history: &UserHistory) -> Self {
        let mut store = Self::new(history.user_id.clone());
        for it in history.interactions() {
            store.record(&it.query, &it.clicked);
        }
        store
    }

    fn record(&mut self, query: &str, clicked: &[String]) {
        if clicked.is_empty() {
            return;
        }
        let key = normalize_query(query);
        if key.is_empty() {
            return;
        }
        let docs = self.entries.entry(key).or_default();
        for doc in clicked {
            *docs.entry(doc.clone()).or_insert(0) += 1;
        }
    }

    /// Folds a finished session into the store.
    pub fn update(&mut self, session: &Session) {
        for it in &session.interactions {
            self.record(&it.query, &it.clicked);
        }
    }

    pub fn clicks(&self, query: &str) -> Option<&BTreeMap<String, u64>> {
        self.entries.get(&normalize_query(query))
    }

    pub fn count(&self, query: &str, doc_id: &str) -> u64 {
        self.clicks(query)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn contains_query(&self, query: &str) -> bool {
        self.entries.contains_key(&normalize_query(query))
    }

    /// Ranks candidates by past click count when the query is a re-finding
    /// query. Returns `None` when the query is unseen or none of the
    /// candidates was ever clicked for it.
    pub fn probe(&self, query: &str, candidates: &[String]) -> Option<SensoryResponse> {
        let counts = self.clicks(query)?;
        let scored: Vec<(usize, u64)> = candidates
            .iter()
            .enumerate()
            .map(|(pos, d)| (pos, counts.get(d).copied().unwrap_or(0)))
            .collect();
        if scored.iter().all(|&(_, c)| c == 0) {
            return None;
        }
        let mut order = scored;
        // count desc, then original position; zero counts fall to the end in order
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Some(SensoryResponse {
            matched: true,
            ranking: order.into_iter().map(|(pos, _)| candidates[pos].clone()).collect(),
        })
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

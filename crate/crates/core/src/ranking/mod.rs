//! Rankers that turn the user-model text and a candidate pool into an
//! ordering, plus BM25 candidate generation.

mod bm25;
mod llm;
mod pclick;
mod vector;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use bm25::{
    attach_candidates, bm25_score, bm25_topk, term_rank, Bm25Params, Corpus, CorpusStats,
    DocTerms, DEFAULT_CANDIDATES, TOP20_CANDIDATES,
};
pub use llm::{llm_rank, LlmRankOptions};
pub use pclick::{pclick_rank, PClickParams};
pub use vector::{VectorScorer, VECTOR_ENDPOINT_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerKind {
    Term,
    #[default]
    Llm,
    Vector,
    Pclick,
}

impl RankerKind {
    pub fn name(self) -> &'static str {
        match self {
            RankerKind::Term => "term",
            RankerKind::Llm => "llm",
            RankerKind::Vector => "vector",
            RankerKind::Pclick => "pclick",
        }
    }
}

impl fmt::Display for RankerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub ranker: String,
    pub docs: Vec<RankedDoc>,
    #[serde(default)]
    pub parse_failure: bool,
    #[serde(default)]
    pub degraded: bool,
}

impl RankedResult {
    /// Orders `ids` by the given ids order verbatim.
    pub fn from_order(ranker: impl Into<String>, ids: Vec<String>) -> Self {
        Self {
            ranker: ranker.into(),
            docs: ids
                .into_iter()
                .enumerate()
                .map(|(i, doc_id)| RankedDoc {
                    doc_id,
                    score: None,
                    rank: i + 1,
                })
                .collect(),
            parse_failure: false,
            degraded: false,
        }
    }

    /// Sorts by score descending; ties keep their input order.
    pub fn from_scores(ranker: impl Into<String>, ids: &[String], scores: &[f64]) -> Self {
        debug_assert_eq!(ids.len(), scores.len());
        let mut idx: Vec<usize> = (0..ids.len()).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self {
            ranker: ranker.into(),
            docs: idx
                .into_iter()
                .enumerate()
                .map(|(r, i)| RankedDoc {
                    doc_id: ids[i].clone(),
                    score: Some(scores[i]),
                    rank: r + 1,
                })
                .collect(),
            parse_failure: false,
            degraded: false,
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

//! Okapi BM25 with the non-negative `ln(1 + (N - df + 0.5) / (df + 0.5))`
//! idf, a JSONL corpus with an inverted index, and top-k candidate
//! generation.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use super::RankedResult;
use crate::error::{Error, Result};
use crate::log::{DocumentRef, HeldOutQuery, TestQuery};
use crate::text::tokenize;

/// Candidate pool size for logs that only record positives.
pub const DEFAULT_CANDIDATES: usize = 50;
/// Pool size when reproducing a search engine's first page.
pub const TOP20_CANDIDATES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Term counts of one document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocTerms {
    pub tf: HashMap<String, u32>,
    pub len: usize,
}

impl DocTerms {
    pub fn from_text(text: &str) -> Self {
        let tokens = tokenize(text);
        let mut tf = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        Self {
            tf,
            len: tokens.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
    pub avgdl: f64,
}

impl CorpusStats {
    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a DocTerms>) -> Self {
        let mut stats = Self::default();
        let mut total_len = 0usize;
        for d in docs {
            stats.n_docs += 1;
            total_len += d.len;
            for term in d.tf.keys() {
                *stats.df.entry(term.clone()).or_insert(0) += 1;
            }
        }
        if stats.n_docs > 0 {
            stats.avgdl = total_len as f64 / stats.n_docs as f64;
        }
        stats
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 of pre-tokenized query terms against one document. Repeated
    /// query terms contribute once per occurrence.
    pub fn score(&self, query_terms: &[String], doc: &DocTerms, params: Bm25Params) -> f64 {
        let norm = if self.avgdl > 0.0 {
            1.0 - params.b + params.b * doc.len as f64 / self.avgdl
        } else {
            1.0
        };
        query_terms
            .iter()
            .map(|t| match doc.tf.get(t) {
                Some(&tf) if tf > 0 => {
                    let tf = tf as f64;
                    self.idf(t) * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
                }
                _ => 0.0,
            })
            .sum()
    }
}

/// BM25 of `query_text` against `doc` (title + body) under `stats`.
pub fn bm25_score(query_text: &str, doc: &DocumentRef, stats: &CorpusStats, params: Bm25Params) -> f64 {
    stats.score(&tokenize(query_text), &DocTerms::from_text(&doc.text()), params)
}

/// Scores every candidate against `user_model` with statistics computed over
/// the candidate pool itself.
pub fn term_rank(user_model: &str, candidates: &[DocumentRef], params: Bm25Params) -> RankedResult {
    let docs: Vec<DocTerms> = candidates.iter().map(|d| DocTerms::from_text(&d.text())).collect();
    let stats = CorpusStats::from_docs(&docs);
    let terms = tokenize(user_model);
    let scores: Vec<f64> = docs.iter().map(|d| stats.score(&terms, d, params)).collect();
    let ids: Vec<String> = candidates.iter().map(|d| d.doc_id.clone()).collect();
    RankedResult::from_scores("term", &ids, &scores)
}

/// Document collection with corpus-wide statistics and postings.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<DocumentRef>,
    index: HashMap<String, usize>,
    terms: Vec<DocTerms>,
    postings: HashMap<String, Vec<usize>>,
    stats: CorpusStats,
}

impl Corpus {
    pub fn new(docs: Vec<DocumentRef>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.doc_id.is_empty() {
                return Err(Error::Data(format!("document #{i} has an empty doc_id")));
            }
            if index.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate doc_id {:?}", d.doc_id)));
            }
        }
        let terms: Vec<DocTerms> = docs.iter().map(|d| DocTerms::from_text(&d.text())).collect();
        let mut postings: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, t) in terms.iter().enumerate() {
            for term in t.tf.keys() {
                postings.entry(term.clone()).or_default().push(i);
            }
        }
        let stats = CorpusStats::from_docs(&terms);
        Ok(Self {
            docs,
            index,
            terms,
            postings,
            stats,
        })
    }

    /// Reads `{doc_id, title, body}` objects, one per line.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut docs = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: DocumentRef = serde_json::from_str(&line).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            docs.push(doc);
        }
        Self::new(docs)
    }

    pub fn docs(&self) -> &[DocumentRef] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocumentRef> {
        self.index.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    /// Corpus-wide BM25 of `query` against every document (zero when no
    /// term matches).
    pub fn scores(&self, query: &str, params: Bm25Params) -> Vec<f64> {
        let terms = tokenize(query);
        let mut scores = vec![0.0; self.docs.len()];
        let mut touched: BTreeSet<usize> = BTreeSet::new();
        for t in terms.iter().collect::<BTreeSet<_>>() {
            if let Some(list) = self.postings.get(t) {
                touched.extend(list.iter().copied());
            }
        }
        for i in touched {
            scores[i] = self.stats.score(&terms, &self.terms[i], params);
        }
        scores
    }
}

/// The `k` best documents for `query` under corpus-wide statistics. Ties and
/// zero-score fillers follow corpus order.
pub fn bm25_topk(corpus: &Corpus, query: &str, k: usize) -> Vec<DocumentRef> {
    let scores = corpus.scores(query, Bm25Params::default());
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter().map(|i| corpus.docs[i].clone()).collect()
}

/// Builds the candidate pool of a held-out query. With `inject`, clicked
/// documents missing from the top-k replace the tail of the pool so the
/// positives are always present (pool size stays `k` when `k` allows it).
/// Documents unknown to the corpus are built from the log's titles.
pub fn attach_candidates(
    corpus: &Corpus,
    held: &HeldOutQuery,
    k: usize,
    inject: bool,
    titles: &HashMap<String, String>,
) -> TestQuery {
    let it = &held.interaction;
    let mut candidates = bm25_topk(corpus, &it.query, k);
    let relevant: BTreeSet<String> = it.clicked.iter().cloned().collect();
    if inject {
        let missing: Vec<&String> = it
            .clicked
            .iter()
            .filter(|d| !candidates.iter().any(|c| &c.doc_id == *d))
            .collect();
        if !missing.is_empty() {
            let keep = candidates.len().saturating_sub(missing.len()).min(k.saturating_sub(missing.len()));
            candidates.truncate(keep);
            for d in missing {
                let doc = corpus.get(d).cloned().unwrap_or_else(|| {
                    DocumentRef::new(d.clone(), titles.get(d).cloned().unwrap_or_default(), "")
                });
                candidates.push(doc);
            }
        }
    }
    TestQuery {
        user_id: held.user_id.clone(),
        session_id: it.session_id.clone(),
        query: it.query.clone(),
        timestamp: it.timestamp,
        candidates,
        relevant,
        skipped: it.skipped.clone(),
    }
}

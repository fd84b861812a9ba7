//! Deterministic synthetic query logs with planted re-finding events and
//! topical structure.
//!
//! Every topic owns a disjoint block of pseudo-words. A small shared block of
//! "ambiguous" words is sprinkled over all documents, and fresh queries are
//! built only from it, so a query alone does not tell which topic the user
//! means. The user's history does. Alongside the corpus and log the
//! generator writes mock-provider rules that encode each slot into the
//! user's topic words, which lets personalization be checked offline.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cognition::{Combine, MockRule, MockRules, PromptFamily};
use crate::error::{Error, Result};
use crate::log::{history_len, serialize_log, DocumentRef, Interaction, UserLog, DEFAULT_SPLIT_FRACTION};
use crate::ranking::{Bm25Params, CorpusStats, DocTerms};
use crate::text::normalize_query;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_users: usize,
    pub sessions_per_user: usize,
    pub interactions_per_session: usize,
    pub topics_per_user: usize,
    /// Words per topic block.
    pub vocab_per_topic: usize,
    /// Probability that an interaction repeats an earlier (query, doc) pair.
    pub refinding_rate: f64,
    pub corpus_size: usize,
    pub docs_per_topic: usize,
    pub ambiguous_terms: usize,
    /// Where the history/test cut falls; test-period repeats only reuse
    /// history pairs.
    pub split_fraction: f64,
    /// Skipped documents logged with each interaction.
    pub skipped_per_interaction: usize,
    pub start_timestamp: i64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_users: 200,
            sessions_per_user: 19,
            interactions_per_session: 7,
            topics_per_user: 2,
            vocab_per_topic: 40,
            refinding_rate: 0.3,
            corpus_size: 1000,
            docs_per_topic: 50,
            ambiguous_terms: 12,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            skipped_per_interaction: 2,
            start_timestamp: 1_141_171_200,
        }
    }
}

impl GenConfig {
    pub fn n_topics(&self) -> usize {
        self.corpus_size / self.docs_per_topic.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_users == 0 || self.sessions_per_user == 0 || self.interactions_per_session == 0 {
            return bad("user, session, and interaction counts must be at least 1".into());
        }
        if self.topics_per_user == 0 || self.docs_per_topic == 0 {
            return bad("topics_per_user and docs_per_topic must be at least 1".into());
        }
        if self.vocab_per_topic < 4 {
            return bad("vocab_per_topic must be at least 4".into());
        }
        if self.ambiguous_terms < 3 {
            return bad("ambiguous_terms must be at least 3".into());
        }
        if !(0.0..=1.0).contains(&self.refinding_rate) {
            return bad(format!("refinding_rate {} is outside [0, 1]", self.refinding_rate));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction {} is outside (0, 1)", self.split_fraction));
        }
        if self.n_topics() < self.topics_per_user.max(2) {
            return bad(format!(
                "corpus of {} documents at {} per topic gives {} topics; need at least {}",
                self.corpus_size,
                self.docs_per_topic,
                self.n_topics(),
                self.topics_per_user.max(2)
            ));
        }
        Ok(())
    }
}

/// One test-period query as planted by the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub user_id: String,
    pub timestamp: i64,
    pub query: String,
    pub planted_refinding: bool,
    pub planted_doc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    /// user -> topic labels
    pub user_topics: BTreeMap<String, Vec<String>>,
    pub test_queries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn planted_fraction(&self) -> f64 {
        if self.test_queries.is_empty() {
            return 0.0;
        }
        self.test_queries.iter().filter(|e| e.planted_refinding).count() as f64 / self.test_queries.len() as f64
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path, &e))
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Vec<DocumentRef>,
    pub users: Vec<UserLog>,
    pub titles: HashMap<String, String>,
    pub manifest: Manifest,
    pub rules: MockRules,
}

struct Topic {
    label: String,
    words: Vec<String>,
}

struct Doc {
    topic: usize,
    ambiguous: Vec<String>,
    words: Vec<String>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "l", "x"];

/// Unique pseudo-words drawn from a syllable grammar.
fn word_pool(rng: &mut ChaCha8Rng, n: usize, used: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        if used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Profile words listed by the mock explicit-encoding rule for a topic.
const PROFILE_WORDS: usize = 8;

/// Generates corpus, log, manifest, and mock rules. Identical configs give
/// identical output.
pub fn generate(cfg: &GenConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = HashSet::new();
    let ambiguous = word_pool(&mut rng, cfg.ambiguous_terms, &mut used);
    let n_topics = cfg.n_topics();
    let topics: Vec<Topic> = (0..n_topics)
        .map(|_| {
            let label = word_pool(&mut rng, 1, &mut used).remove(0);
            Topic {
                label: capitalize(&label),
                words: word_pool(&mut rng, cfg.vocab_per_topic, &mut used),
            }
        })
        .collect();

    // documents: topic words plus two or three ambiguous words
    let mut docs = Vec::with_capacity(cfg.corpus_size);
    for i in 0..cfg.corpus_size {
        let topic = (i / cfg.docs_per_topic).min(n_topics - 1);
        let len = rng.gen_range(30..=80);
        let n_amb = rng.gen_range(2..=3);
        let amb: Vec<String> = ambiguous.choose_multiple(&mut rng, n_amb).cloned().collect();
        let mut words: Vec<String> = (0..len - n_amb)
            .map(|_| topics[topic].words[rng.gen_range(0..cfg.vocab_per_topic)].clone())
            .collect();
        for a in &amb {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, a.clone());
        }
        docs.push(Doc {
            topic,
            ambiguous: amb,
            words,
        });
    }
    let corpus: Vec<DocumentRef> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let title = format!("{} {} {}", topics[d.topic].label, d.words[0], d.words[1]);
            DocumentRef::new(format!("doc{i:05}"), title, d.words[2..].join(" "))
        })
        .collect();
    let titles: HashMap<String, String> = corpus.iter().map(|d| (d.doc_id.clone(), d.title.clone())).collect();
    let terms: Vec<DocTerms> = corpus.iter().map(|d| DocTerms::from_text(&d.text())).collect();
    let stats = CorpusStats::from_docs(&terms);
    let by_topic: Vec<Vec<usize>> = (0..n_topics)
        .map(|t| (0..docs.len()).filter(|&i| docs[i].topic == t).collect())
        .collect();

    let per_user = cfg.sessions_per_user * cfg.interactions_per_session;
    let cut = history_len(per_user, cfg.split_fraction);
    let mut users = Vec::with_capacity(cfg.n_users);
    let mut user_topics = BTreeMap::new();
    let mut manifest_entries = Vec::new();

    for u in 0..cfg.n_users {
        let user_id = format!("u{u:04}");
        let mine: Vec<usize> = {
            let all: Vec<usize> = (0..n_topics).collect();
            all.choose_multiple(&mut rng, cfg.topics_per_user).copied().collect()
        };
        user_topics.insert(user_id.clone(), mine.iter().map(|&t| topics[t].label.clone()).collect());
        let mut seen_queries: HashSet<String> = HashSet::new();
        let mut pairs: Vec<(String, usize, Vec<usize>)> = Vec::new();
        let mut history_pairs = 0;
        let mut interactions = Vec::with_capacity(per_user);
        let mut ts = cfg.start_timestamp + (u as i64) * 37;

        for s in 0..cfg.sessions_per_user {
            let session_id = format!("{user_id}-s{s:02}");
            for k in 0..cfg.interactions_per_session {
                let idx = interactions.len();
                // repeats in the test period only reuse history pairs
                if idx == cut {
                    history_pairs = pairs.len();
                }
                let pool = if idx < cut { pairs.len() } else { history_pairs };
                let repeat = pool > 0 && rng.gen_bool(cfg.refinding_rate);
                let (query, clicked, skipped) = if repeat {
                    let (q, d, sk) = pairs[rng.gen_range(0..pool)].clone();
                    (q, d, sk)
                } else {
                    let (q, d, sk) = fresh_query(&mut rng, cfg, &docs, &by_topic, &mine, &stats, &terms, &ambiguous, &mut seen_queries)
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "could not plant a unique query for {user_id}; enlarge the vocabulary or corpus"
                            ))
                        })?;
                    pairs.push((q.clone(), d, sk.clone()));
                    (q, d, sk)
                };
                ts += if k == 0 && s > 0 {
                    rng.gen_range(3 * 3600..48 * 3600)
                } else {
                    rng.gen_range(20..300)
                };
                if idx >= cut {
                    manifest_entries.push(ManifestEntry {
                        user_id: user_id.clone(),
                        timestamp: ts,
                        query: query.clone(),
                        planted_refinding: repeat,
                        planted_doc: corpus[clicked].doc_id.clone(),
                    });
                }
                interactions.push(Interaction {
                    query,
                    timestamp: ts,
                    session_id: session_id.clone(),
                    clicked: vec![corpus[clicked].doc_id.clone()],
                    skipped: skipped.iter().map(|&i| corpus[i].doc_id.clone()).collect(),
                });
            }
        }
        users.push(UserLog {
            user_id,
            interactions,
        });
    }

    let rules = mock_rules(cfg.seed, &topics);
    Ok(SynthData {
        corpus,
        users,
        titles,
        manifest: Manifest {
            config: cfg.clone(),
            user_topics,
            test_queries: manifest_entries,
        },
        rules,
    })
}

/// Two or three ambiguous words of a document from one of the user's
/// topics, sometimes plus one ambiguous word the document lacks. The query
/// alone never names the topic. Skipped documents share at most one query
/// word and score strictly lower under BM25.
#[allow(clippy::too_many_arguments)]
fn fresh_query(
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
    docs: &[Doc],
    by_topic: &[Vec<usize>],
    mine: &[usize],
    stats: &CorpusStats,
    terms: &[DocTerms],
    ambiguous: &[String],
    seen: &mut HashSet<String>,
) -> Option<(String, usize, Vec<usize>)> {
    for _ in 0..200 {
        let topic = mine[rng.gen_range(0..mine.len())];
        let d = by_topic[topic][rng.gen_range(0..by_topic[topic].len())];
        let doc = &docs[d];
        let k = rng.gen_range(2..=doc.ambiguous.len());
        let mut words: Vec<String> = doc.ambiguous.choose_multiple(rng, k).cloned().collect();
        if rng.gen_bool(0.5) {
            let others: Vec<&String> = ambiguous.iter().filter(|w| !doc.ambiguous.contains(w)).collect();
            words.push((*others.choose(rng).expect("at least three ambiguous words")).clone());
        }
        words.shuffle(rng);
        let query = words.join(" ");
        let key = normalize_query(&query);
        if seen.contains(&key) {
            continue;
        }
        let q_terms: Vec<String> = words.clone();
        let clicked_score = stats.score(&q_terms, &terms[d], Bm25Params::default());
        let mut skipped = Vec::new();
        let mut tries = 0;
        while skipped.len() < cfg.skipped_per_interaction && tries < 500 {
            tries += 1;
            let s = rng.gen_range(0..docs.len());
            if s == d || skipped.contains(&s) {
                continue;
            }
            let shared = words.iter().filter(|w| terms[s].tf.contains_key(*w)).count();
            if shared <= 1 && stats.score(&q_terms, &terms[s], Bm25Params::default()) < clicked_score {
                skipped.push(s);
            }
        }
        if skipped.len() < cfg.skipped_per_interaction {
            continue;
        }
        seen.insert(key);
        return Some((query, d, skipped));
    }
    None
}

/// Rules that make the mock provider behave like a cooperative model on
/// synthetic data: slot encoding names the topics of clicked documents,
/// retrieval returns the whole slot, and user modeling concatenates the
/// query with the retrieved profile.
fn mock_rules(seed: u64, topics: &[Topic]) -> MockRules {
    let mut rules = Vec::new();
    for t in topics {
        let key = format!("clicked: {} ", t.label);
        let words = t.words[..PROFILE_WORDS.min(t.words.len())].join(", ");
        rules.push(
            MockRule::substring(key.clone(), format!("{}: {}, {}", t.label, t.label.to_lowercase(), words))
                .for_family(PromptFamily::SummarizeExplicit),
        );
        rules.push(
            MockRule::substring(key, format!("Social Image: {} enthusiast", t.label.to_lowercase()))
                .for_family(PromptFamily::SummarizeImplicit),
        );
    }
    rules.push(MockRule::regex(r"(?s)memory slot\]\n(.*?)\n\n", "$1").for_family(PromptFamily::Retrieve));
    rules.push(
        MockRule::regex(
            r"(?s)\[User background\]\n(.*?)\n\n\[User interests\]\n(.*?)\n\n\[Recent Interactions\]\n.*?\n\n\[Re-written Query\]\n(.*?)\n\n",
            "$3 $2 $1",
        )
        .for_family(PromptFamily::ModelUser),
    );
    MockRules {
        combine: Combine::All,
        seed,
        rules,
        ..MockRules::default()
    }
}

impl SynthData {
    /// Writes `corpus.jsonl`, `log.tsv`, `manifest.json`, and
    /// `mock_rules.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let corpus_path = dir.join("corpus.jsonl");
        let mut corpus = String::new();
        for d in &self.corpus {
            corpus.push_str(&serde_json::to_string(d).map_err(|e| Error::json(&corpus_path, &e))?);
            corpus.push('\n');
        }
        std::fs::write(&corpus_path, corpus).map_err(|e| Error::io(&corpus_path, e))?;

        let log_path = dir.join("log.tsv");
        let mut log = Vec::new();
        serialize_log(&self.users, &self.titles, &mut log).map_err(|e| Error::io(&log_path, e))?;
        std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;

        let manifest_path = dir.join("manifest.json");
        crate::eval::write_json(&manifest_path, &self.manifest)?;
        self.rules.save(&dir.join("mock_rules.json"))
    }
}

//! Client for an external pairwise scoring service (a cross-encoder or
//! similar). The service receives `{pairs: [{text_a, text_b}]}` and answers
//! `{scores: [..]}` with one score per pair.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::RankedResult;
use crate::error::{Error, Result};
use crate::log::DocumentRef;

/// Environment variable that overrides the configured service endpoint.
pub const VECTOR_ENDPOINT_ENV: &str = "COPS_VECTOR_ENDPOINT";

#[derive(Serialize)]
struct Pair<'a> {
    text_a: &'a str,
    text_b: String,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<Pair<'a>>,
}

#[derive(Deserialize)]
struct ScoreReply {
    scores: Vec<f64>,
}

pub struct VectorScorer {
    endpoint: String,
    agent: ureq::Agent,
}

impl VectorScorer {
    pub fn new(endpoint: impl Into<String>, timeout_secs: u64) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }

    /// Endpoint from the environment, falling back to `configured`.
    pub fn from_env(configured: Option<&str>, timeout_secs: u64) -> Option<Self> {
        std::env::var(VECTOR_ENDPOINT_ENV)
            .ok()
            .filter(|e| !e.is_empty())
            .or_else(|| configured.filter(|e| !e.is_empty()).map(str::to_string))
            .map(|e| Self::new(e, timeout_secs))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Scores `(user_model, title + body)` pairs and sorts by score.
    pub fn rank(&self, user_model: &str, candidates: &[DocumentRef]) -> Result<RankedResult> {
        let request = ScoreRequest {
            pairs: candidates
                .iter()
                .map(|d| Pair {
                    text_a: user_model,
                    text_b: d.text(),
                })
                .collect(),
        };
        let unavailable = |msg: String| Error::RankerUnavailable(format!("{}: {msg}", self.endpoint));
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&request)
            .map_err(|e| unavailable(e.to_string()))?;
        let reply: ScoreReply = response
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(format!("unreadable reply: {e}")))?;
        if reply.scores.len() != candidates.len() {
            return Err(unavailable(format!(
                "expected {} scores, got {}",
                candidates.len(),
                reply.scores.len()
            )));
        }
        let ids: Vec<String> = candidates.iter().map(|d| d.doc_id.clone()).collect();
        Ok(RankedResult::from_scores("vector", &ids, &reply.scores))
    }
}

//! P-Click: personal click frequency on the same query, fused with the
//! original ranking by Borda count.

use super::{RankedDoc, RankedResult};
use crate::sensory::SensoryStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PClickParams {
    /// Smoothing added to the query's total click count.
    pub beta: f64,
    /// Weight of the click-based ranking in the Borda sum.
    pub lambda: f64,
}

impl Default for PClickParams {
    fn default() -> Self {
        Self {
            beta: 0.5,
            lambda: 1.0,
        }
    }
}

/// Re-ranks `candidates` (given in original order) for `query`.
///
/// Borda ties are broken by click score, then by original position. Without
/// the click-score step a two-document pool where only the second document
/// was ever clicked would tie and keep the unclicked document on top.
pub fn pclick_rank(
    clicks: &SensoryStore,
    query: &str,
    candidates: &[String],
    params: PClickParams,
) -> RankedResult {
    let n = candidates.len();
    let counts: Vec<u64> = candidates.iter().map(|d| clicks.count(query, d)).collect();
    let total: u64 = clicks.clicks(query).map(|m| m.values().sum()).unwrap_or(0);
    let pscore: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / (total as f64 + params.beta))
        .collect();

    let mut by_pscore: Vec<usize> = (0..n).collect();
    by_pscore.sort_by(|&a, &b| pscore[b].total_cmp(&pscore[a]).then(a.cmp(&b)));
    let mut pscore_rank = vec![0usize; n];
    for (r, &i) in by_pscore.iter().enumerate() {
        pscore_rank[i] = r + 1;
    }

    let borda: Vec<f64> = (0..n)
        .map(|i| (n - (i + 1)) as f64 + params.lambda * (n - pscore_rank[i]) as f64)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        borda[b]
            .total_cmp(&borda[a])
            .then(pscore[b].total_cmp(&pscore[a]))
            .then(a.cmp(&b))
    });
    RankedResult {
        ranker: "pclick".into(),
        docs: order
            .into_iter()
            .enumerate()
            .map(|(r, i)| RankedDoc {
                doc_id: candidates[i].clone(),
                score: Some(borda[i]),
                rank: r + 1,
            })
            .collect(),
        parse_failure: false,
        degraded: false,
    }
}

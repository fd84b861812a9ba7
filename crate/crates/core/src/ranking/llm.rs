//! Listwise ranking by the language model, with sliding windows for pools
//! larger than one prompt.

use super::RankedResult;
use crate::cognition::{parse_ranking, CognitiveUnit, Meter, PromptFamily};
use crate::log::DocumentRef;
use crate::text::{char_prefix, estimate_tokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LlmRankOptions {
    pub window: usize,
    pub stride: usize,
    /// Body characters shown per candidate.
    pub snippet_chars: usize,
}

impl Default for LlmRankOptions {
    fn default() -> Self {
        Self {
            window: 20,
            stride: 10,
            snippet_chars: 200,
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace('>', " ")
}

fn render_candidates(docs: &[&DocumentRef], snippet_chars: usize) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let title = one_line(&d.title);
            let body = one_line(char_prefix(&d.body, snippet_chars));
            if body.is_empty() {
                format!("[{}] {}", i + 1, title)
            } else {
                format!("[{}] {}: {}", i + 1, title, body)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

struct WindowOutcome {
    order: Vec<usize>,
    parse_failed: bool,
    failed: bool,
}

fn rank_window(
    unit: &CognitiveUnit,
    query: &str,
    user_model: &str,
    docs: &[&DocumentRef],
    opts: &LlmRankOptions,
    meter: &mut Meter,
) -> WindowOutcome {
    let identity = (1..=docs.len()).collect();
    if docs.len() <= 1 {
        return WindowOutcome {
            order: identity,
            parse_failed: false,
            failed: false,
        };
    }
    let render = |chars: usize| {
        unit.templates().render(
            PromptFamily::Rank,
            &[
                ("query", query),
                ("preferences", user_model),
                ("candidates", &render_candidates(docs, chars)),
            ],
        )
    };
    // shrink snippets until the prompt fits
    let mut chars = opts.snippet_chars;
    let mut prompt = render(chars);
    while estimate_tokens(&prompt) > unit.input_budget() && chars > 0 {
        chars /= 2;
        prompt = render(chars);
    }
    match unit.complete(PromptFamily::Rank, &prompt, meter) {
        Ok(reply) => {
            let parsed = parse_ranking(&reply.text, docs.len());
            WindowOutcome {
                order: parsed.order,
                parse_failed: parsed.parse_failed,
                failed: false,
            }
        }
        Err(err) => {
            log::debug!("rank completion failed: {err}");
            WindowOutcome {
                order: identity,
                parse_failed: false,
                failed: true,
            }
        }
    }
}

/// Ranks candidates with the model. Pools larger than `window` are ranked
/// with overlapping windows from the tail of the list to its head, so strong
/// documents bubble forward. Provider failures keep the affected window in
/// its current order and mark the result degraded.
pub fn llm_rank(
    unit: &CognitiveUnit,
    query: &str,
    user_model: &str,
    candidates: &[DocumentRef],
    opts: &LlmRankOptions,
    meter: &mut Meter,
) -> RankedResult {
    let n = candidates.len();
    let window = opts.window.max(2);
    let stride = opts.stride.clamp(1, window);
    let mut order: Vec<usize> = (0..n).collect();
    let mut parse_failure = false;
    let mut degraded = false;

    let mut end = n;
    loop {
        let start = end.saturating_sub(window);
        let slice: Vec<&DocumentRef> = order[start..end].iter().map(|&i| &candidates[i]).collect();
        let outcome = rank_window(unit, query, user_model, &slice, opts, meter);
        parse_failure |= outcome.parse_failed;
        degraded |= outcome.failed;
        let reordered: Vec<usize> = outcome.order.iter().map(|&l| order[start + l - 1]).collect();
        order.splice(start..end, reordered);
        if start == 0 {
            break;
        }
        end -= stride;
    }

    if degraded {
        meter.degrade("llm_rank");
    }
    let ids = order.iter().map(|&i| candidates[i].doc_id.clone()).collect();
    let mut result = RankedResult::from_order("llm", ids);
    result.parse_failure = parse_failure;
    result.degraded = degraded;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cognition::{
        Completion, CompletionRequest, MockProvider, MockRule, MockRules, Provider, ProviderConfig,
        ProviderError,
    };
    use std::sync::{Arc, Mutex};

    fn docs(n: usize) -> Vec<DocumentRef> {
        (1..=n).map(|i| DocumentRef::new(format!("d{i}"), format!("title {i}"), "body")).collect()
    }

    fn unit_with(p: Arc<dyn Provider>) -> CognitiveUnit {
        CognitiveUnit::new(p, ProviderConfig::default())
    }

    #[test]
    fn single_candidate_needs_no_call() {
        let u = unit_with(Arc::new(MockProvider::echo()));
        let mut m = Meter::new();
        let r = llm_rank(&u, "q", "u", &docs(1), &LlmRankOptions::default(), &mut m);
        assert_eq!(r.ids(), vec!["d1"]);
        assert_eq!(m.calls, 0);
    }

    #[test]
    fn canned_reply_orders_candidates() {
        let rules = MockRules {
            rules: vec![MockRule::substring("[Candidate documents]", "3 > 1 > 2")],
            ..MockRules::default()
        };
        let u = unit_with(Arc::new(MockProvider::new(rules).unwrap()));
        let r = llm_rank(&u, "q", "u", &docs(3), &LlmRankOptions::default(), &mut Meter::new());
        assert_eq!(r.ids(), vec!["d3", "d1", "d2"]);
        assert!(!r.parse_failure);
    }

    #[test]
    fn echo_reply_keeps_original_order() {
        let u = unit_with(Arc::new(MockProvider::echo()));
        let r = llm_rank(&u, "q", "u", &docs(5), &LlmRankOptions::default(), &mut Meter::new());
        assert_eq!(r.ids(), docs(5).iter().map(|d| d.doc_id.clone()).collect::<Vec<_>>());
    }

    struct Down;
    impl Provider for Down {
        fn id(&self) -> String {
            "down".into()
        }
        fn complete(&self, _: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
            Err(ProviderError::Failed("down".into()))
        }
    }

    #[test]
    fn provider_failure_keeps_order_and_flags() {
        let u = unit_with(Arc::new(Down));
        let mut m = Meter::new();
        let r = llm_rank(&u, "q", "u", &docs(3), &LlmRankOptions::default(), &mut m);
        assert_eq!(r.ids(), vec!["d1", "d2", "d3"]);
        assert!(r.degraded);
        assert!(m.degradations.contains(&"llm_rank".to_string()));
    }

    /// Ranks by the number inside each candidate title, largest first, and
    /// records the window sizes it saw.
    struct ByTitleNumber {
        windows: Mutex<Vec<usize>>,
    }

    impl Provider for ByTitleNumber {
        fn id(&self) -> String {
            "by-number".into()
        }
        fn complete(&self, r: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
            let section = crate::cognition::last_bracketed_section(r.prompt);
            let mut items: Vec<(usize, usize)> = section
                .lines()
                .map(|l| {
                    let label: usize = l[1..l.find(']').unwrap()].parse().unwrap();
                    let num: usize = l.split_whitespace().nth(2).unwrap().trim_end_matches(':').parse().unwrap();
                    (label, num)
                })
                .collect();
            self.windows.lock().unwrap().push(items.len());
            items.sort_by_key(|i| std::cmp::Reverse(i.1));
            let text = items.iter().map(|(l, _)| l.to_string()).collect::<Vec<_>>().join(" > ");
            Ok(Completion { text, latency: 0.0 })
        }
    }

    #[test]
    fn sliding_windows_bubble_the_best_to_the_top() {
        let p = Arc::new(ByTitleNumber {
            windows: Mutex::new(vec![]),
        });
        let u = unit_with(p.clone());
        let r = llm_rank(&u, "q", "u", &docs(45), &LlmRankOptions::default(), &mut Meter::new());
        let ids = r.ids();
        // the ten largest numbers must surface in order at the head
        let head: Vec<String> = (36..=45).rev().map(|i| format!("d{i}")).collect();
        assert_eq!(&ids[..10], head.as_slice());
        let mut sorted = ids.clone();
        sorted.sort();
        let mut want: Vec<String> = docs(45).iter().map(|d| d.doc_id.clone()).collect();
        want.sort();
        assert_eq!(sorted, want);
        assert!(p.windows.lock().unwrap().iter().all(|&w| w <= 20));
    }
}

//! Input-budget control: chunk-and-summarize compression and a helper that
//! shrinks the variable sections of a prompt until it fits.

use super::provider::PromptFamily;
use super::unit::{CognitiveUnit, Meter};
use crate::text::{estimate_tokens, head_truncate, tokens_for_words, words_for_tokens};

/// Summarization passes before falling back to head truncation.
pub const MAX_SUMMARY_PASSES: usize = 3;

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Compresses `text` until its token estimate is at most `budget`.
///
/// Each pass splits the text into chunks of at most `budget` tokens,
/// summarizes every chunk, and concatenates the summaries. A pass that fails
/// to shrink the text, a provider error, or running out of passes ends in
/// head truncation, so the result always fits.
pub fn chunk_summarize(unit: &CognitiveUnit, text: &str, budget: usize, meter: &mut Meter) -> String {
    if estimate_tokens(text) <= budget {
        return text.to_string();
    }
    let overhead = estimate_tokens(&unit.templates().render(PromptFamily::Compress, &[("text", "")]));
    let room = words_for_tokens(unit.input_budget()).saturating_sub(words_for_tokens(overhead) + 1);
    let chunk_words = words_for_tokens(budget).min(room);
    if chunk_words == 0 {
        return head_truncate(text, budget);
    }

    let mut current = text.to_string();
    for _ in 0..MAX_SUMMARY_PASSES {
        let tokens = words(&current);
        let mut summaries = Vec::new();
        for chunk in tokens.chunks(chunk_words) {
            let chunk = chunk.join(" ");
            let prompt = unit.templates().render(PromptFamily::Compress, &[("text", &chunk)]);
            match unit.complete(PromptFamily::Compress, &prompt, meter) {
                Ok(reply) => summaries.push(reply.text.trim().to_string()),
                Err(err) => {
                    log::debug!("summarization failed, truncating: {err}");
                    meter.degrade("summarize");
                    return head_truncate(text, budget);
                }
            }
        }
        let next = summaries.join("\n");
        let next_estimate = estimate_tokens(&next);
        if next_estimate <= budget {
            return next;
        }
        if next_estimate >= estimate_tokens(&current) {
            return head_truncate(&current, budget);
        }
        current = next;
    }
    head_truncate(&current, budget)
}

/// Renders `family` with `fixed` values verbatim and `variable` sections
/// compressed as needed so the whole prompt fits the unit's input budget.
///
/// Sections share the room left by the fixed part in proportion to their
/// size. When the fixed part alone is over budget the prompt is returned
/// unchanged and the provider call will reject it.
pub fn fit_sections(
    unit: &CognitiveUnit,
    family: PromptFamily,
    fixed: &[(&str, &str)],
    variable: &[(&str, String)],
    meter: &mut Meter,
) -> String {
    let render = |vals: &[(&str, String)]| {
        let mut vars: Vec<(&str, &str)> = fixed.to_vec();
        vars.extend(vals.iter().map(|(k, v)| (*k, v.as_str())));
        unit.templates().render(family, &vars)
    };
    let full = render(variable);
    let budget = unit.input_budget();
    if estimate_tokens(&full) <= budget {
        return full;
    }
    let empties: Vec<(&str, String)> = variable.iter().map(|(k, _)| (*k, String::new())).collect();
    let base_words = words(&render(&empties)).len();
    let max_words = words_for_tokens(budget);
    if base_words >= max_words {
        return full;
    }
    let room = max_words - base_words;
    let total: usize = variable.iter().map(|(_, v)| words(v).len()).sum();
    let shrunk: Vec<(&str, String)> = variable
        .iter()
        .map(|(k, v)| {
            let n = words(v).len();
            let share = room * n / total.max(1);
            if n <= share {
                (*k, v.clone())
            } else if share == 0 {
                (*k, String::new())
            } else {
                (*k, chunk_summarize(unit, v, tokens_for_words(share), meter))
            }
        })
        .collect();
    render(&shrunk)
}

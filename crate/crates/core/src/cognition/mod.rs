//! The cognitive unit: a completion-provider boundary plus the prompt
//! templates and reply parsers every language-model step goes through.
//!
//! Providers implement [`Provider`]. [`CognitiveUnit`] wraps one with the
//! input budget check, retries, a FIFO concurrency cap, and an optional
//! trace sink.

mod budget;
mod cache;
mod http;
mod mock;
mod parse;
mod prompts;
mod provider;
mod unit;

pub use budget::{chunk_summarize, fit_sections, MAX_SUMMARY_PASSES};
pub use cache::CachedProvider;
pub use http::HttpProvider;
pub use mock::{Combine, LatencyModel, MockProvider, MockRule, MockRules};
pub use parse::{
    clean_rewrite, last_bracketed_section, parse_attributes, parse_ranking, parse_retrieved_items,
    parse_topics, ExplicitEntry, ImplicitEntry, RankingParse,
};
pub use prompts::{PromptTemplate, PromptTemplates};
pub use provider::{
    Completion, CompletionRecord, CompletionRequest, JsonlSink, MemorySink, PromptFamily,
    Provider, ProviderConfig, ProviderError, TraceSink,
};
pub use unit::{CognitiveUnit, Meter, Reply};

/// Asks the model to clarify the query. Falls back to the original query on
/// any provider failure or an empty reply.
pub fn rewrite_query(unit: &CognitiveUnit, query: &str, meter: &mut Meter) -> String {
    let prompt = unit.templates().render(PromptFamily::Rewrite, &[("query", query)]);
    match unit.complete(PromptFamily::Rewrite, &prompt, meter) {
        Ok(reply) => clean_rewrite(&reply.text).unwrap_or_else(|| query.to_string()),
        Err(err) => {
            log::debug!("query rewrite failed: {err}");
            meter.degrade("rewrite");
            query.to_string()
        }
    }
}

//! Working memory: the query-time context (rewritten query, recent session
//! interactions, retrieved profile) and the user-modeling step that turns it
//! into a statement of personalized intent.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cognition::{fit_sections, rewrite_query, CognitiveUnit, Meter, PromptFamily};
use crate::log::{Interaction, Session};
use crate::longterm::{render_interactions, KindToggles, LongTermStore, RetrievalMode, DEFAULT_LEXICAL_K};

/// Recent interactions shown to user modeling.
pub const DEFAULT_RECENT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    pub rewrite: bool,
    pub retrieve_explicit: bool,
    pub retrieve_implicit: bool,
    pub recent: bool,
}

impl Toggles {
    pub fn all() -> Self {
        Self {
            rewrite: true,
            retrieve_explicit: true,
            retrieve_implicit: true,
            recent: true,
        }
    }

    pub fn none() -> Self {
        Self {
            rewrite: false,
            retrieve_explicit: false,
            retrieve_implicit: false,
            recent: false,
        }
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssembleOptions {
    pub recent: usize,
    pub retrieval: RetrievalMode,
    pub lexical_k: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            recent: DEFAULT_RECENT,
            retrieval: RetrievalMode::Llm,
            lexical_k: DEFAULT_LEXICAL_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingContext {
    pub original_query: String,
    /// Never empty; the original query when rewriting is off or fails.
    pub rewritten_query: String,
    pub recent: Vec<Interaction>,
    pub interests: Vec<String>,
    pub background: Vec<String>,
}

impl WorkingContext {
    pub fn bare(query: &str) -> Self {
        Self {
            original_query: query.to_string(),
            rewritten_query: query.to_string(),
            recent: vec![],
            interests: vec![],
            background: vec![],
        }
    }
}

/// Builds the context for `query`. Disabled parts stay empty; retrieval is
/// keyed on the rewritten query.
pub fn assemble(
    unit: &CognitiveUnit,
    query: &str,
    short_term: &Session,
    store: Option<&LongTermStore>,
    toggles: Toggles,
    opts: &AssembleOptions,
    meter: &mut Meter,
) -> WorkingContext {
    let mut ctx = WorkingContext::bare(query);
    if toggles.rewrite {
        ctx.rewritten_query = rewrite_query(unit, query, meter);
    }
    if toggles.recent {
        let its = &short_term.interactions;
        ctx.recent = its[its.len().saturating_sub(opts.recent)..].to_vec();
    }
    let kinds = KindToggles {
        explicit: toggles.retrieve_explicit,
        implicit: toggles.retrieve_implicit,
    };
    if let Some(store) = store.filter(|_| kinds.explicit || kinds.implicit) {
        let profile = store.retrieve_profile(unit, &ctx.rewritten_query, opts.retrieval, kinds, opts.lexical_k, meter);
        ctx.interests = profile.interests;
        ctx.background = profile.background;
    }
    ctx
}

fn lines(items: &[String]) -> String {
    items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
}

/// Infers the personalized intent. An empty reply or a provider failure
/// yields the rewritten query.
pub fn model_user(
    unit: &CognitiveUnit,
    ctx: &WorkingContext,
    titles: &HashMap<String, String>,
    meter: &mut Meter,
) -> String {
    let prompt = fit_sections(
        unit,
        PromptFamily::ModelUser,
        &[("query", &ctx.rewritten_query)],
        &[
            ("background", lines(&ctx.background)),
            ("interests", lines(&ctx.interests)),
            ("recent", render_interactions(&ctx.recent, titles)),
        ],
        meter,
    );
    match unit.complete(PromptFamily::ModelUser, &prompt, meter) {
        Ok(reply) => {
            let text = reply.text.trim();
            if text.is_empty() {
                ctx.rewritten_query.clone()
            } else {
                text.to_string()
            }
        }
        Err(err) => {
            log::debug!("user modeling failed: {err}");
            meter.degrade("model_user");
            ctx.rewritten_query.clone()
        }
    }
}

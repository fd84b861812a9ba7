//! Deterministic rule-based provider for offline runs and tests.
//!
//! A rules file looks like:
//!
//! ```json
//! {
//!   "combine": "first",
//!   "seed": 0,
//!   "latency": {"base_seconds": 0.25, "per_token_seconds": 0.0005},
//!   "rules": [
//!     {"match": "Maybelline new yorky", "family": "rewrite", "reply": "Maybelline New York make up"},
//!     {"match": "(?s)\\[User interests\\]\\n(.*?)\\n\\n", "regex": true, "reply": "$1"}
//!   ]
//! }
//! ```
//!
//! `match` is a substring unless `regex` is set; regex replies may use
//! `$1`/`${name}` capture references. With `combine: "first"` the first
//! matching rule answers; with `"all"` every matching rule's reply is joined
//! by newlines. A rule with `replies` picks one by hashing the prompt with the
//! seed. `fail: true` makes the rule raise a provider error. When nothing
//! matches, the provider echoes the content of the prompt's last `[Header]`
//! section.
//!
//! Latency is simulated, never slept: `base + per_token * (prompt + reply
//! tokens)`, so replays are reproducible to the byte.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::parse::last_bracketed_section;
use super::provider::{Completion, CompletionRequest, PromptFamily, Provider, ProviderError};
use crate::error::{Error, Result};
use crate::text::estimate_tokens;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    First,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    pub base_seconds: f64,
    pub per_token_seconds: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            base_seconds: 0.25,
            per_token_seconds: 0.0005,
        }
    }
}

impl LatencyModel {
    pub fn latency(&self, prompt: &str, reply: &str) -> f64 {
        self.base_seconds + self.per_token_seconds * (estimate_tokens(prompt) + estimate_tokens(reply)) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub regex: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<PromptFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail: bool,
}

impl MockRule {
    pub fn substring(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            reply: Some(reply.into()),
            ..Self::default()
        }
    }

    pub fn regex(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            regex: true,
            ..Self::substring(pattern, reply)
        }
    }

    pub fn for_family(mut self, family: PromptFamily) -> Self {
        self.family = Some(family);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRules {
    #[serde(default)]
    pub combine: Combine,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl MockRules {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path, &e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, &e))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

enum Matcher {
    Substring(String),
    Regex(Regex),
}

struct CompiledRule {
    matcher: Matcher,
    rule: MockRule,
}

pub struct MockProvider {
    rules: Vec<CompiledRule>,
    combine: Combine,
    seed: u64,
    latency: LatencyModel,
}

impl MockProvider {
    pub fn new(spec: MockRules) -> Result<Self> {
        let rules = spec
            .rules
            .into_iter()
            .map(|rule| {
                let matcher = if rule.regex {
                    Matcher::Regex(Regex::new(&rule.pattern).map_err(|e| {
                        Error::Config(format!("bad mock rule pattern {:?}: {e}", rule.pattern))
                    })?)
                } else {
                    Matcher::Substring(rule.pattern.clone())
                };
                if rule.reply.is_none() && rule.replies.is_empty() && !rule.fail {
                    return Err(Error::Config(format!(
                        "mock rule {:?} has no reply",
                        rule.pattern
                    )));
                }
                Ok(CompiledRule { matcher, rule })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rules,
            combine: spec.combine,
            seed: spec.seed,
            latency: spec.latency,
        })
    }

    /// Echo-only provider.
    pub fn echo() -> Self {
        Self::new(MockRules::default()).expect("empty rule set is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::new(MockRules::load(path)?)
    }

    fn pick<'a>(&self, rule: &'a MockRule, prompt: &str) -> &'a str {
        if rule.replies.is_empty() {
            return rule.reply.as_deref().unwrap_or("");
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt.as_bytes());
        let digest = h.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        let idx = (u64::from_le_bytes(head) % rule.replies.len() as u64) as usize;
        &rule.replies[idx]
    }

    fn answer(&self, family: PromptFamily, prompt: &str) -> Result<String, ProviderError> {
        let mut replies = Vec::new();
        for compiled in &self.rules {
            if compiled.rule.family.is_some_and(|f| f != family) {
                continue;
            }
            let reply = match &compiled.matcher {
                Matcher::Substring(s) => {
                    if !prompt.contains(s.as_str()) {
                        continue;
                    }
                    self.pick(&compiled.rule, prompt).to_string()
                }
                Matcher::Regex(re) => {
                    let Some(caps) = re.captures(prompt) else {
                        continue;
                    };
                    let mut out = String::new();
                    caps.expand(self.pick(&compiled.rule, prompt), &mut out);
                    out
                }
            };
            if compiled.rule.fail {
                return Err(ProviderError::Failed(format!(
                    "mock rule {:?} configured to fail",
                    compiled.rule.pattern
                )));
            }
            replies.push(reply);
            if self.combine == Combine::First {
                break;
            }
        }
        if replies.is_empty() {
            Ok(last_bracketed_section(prompt))
        } else {
            Ok(replies.join("\n"))
        }
    }
}

impl Provider for MockProvider {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let text = self.answer(request.family, request.prompt)?;
        let latency = self.latency.latency(request.prompt, &text);
        Ok(Completion { text, latency })
    }
}

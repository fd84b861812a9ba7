//! Lenient parsers for model replies. None of them fail: unusable lines are
//! skipped and callers get whatever structure could be recovered.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Topic -> interests entry of explicit memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitEntry {
    pub topic: String,
    pub interests: Vec<String>,
}

impl ExplicitEntry {
    pub fn render(&self) -> String {
        format!("{}: {}", self.topic, self.interests.join(", "))
    }
}

/// Attribute -> value entry of implicit memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitEntry {
    pub attribute: String,
    pub value: String,
}

impl ImplicitEntry {
    pub fn render(&self) -> String {
        format!("{}: {}", self.attribute, self.value)
    }
}

fn list_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]+|\d+[.)])\s*").expect("valid regex"))
}

/// Drops a leading bullet or ordinal (`- `, `* `, `1. `, `2) `).
fn strip_marker(line: &str) -> &str {
    match list_marker().find(line) {
        Some(m) => &line[m.end()..],
        None => line,
    }
    .trim()
}

fn key_value(line: &str) -> Option<(String, &str)> {
    let line = strip_marker(line);
    let (key, value) = line.split_once(':')?;
    let key = key.trim().trim_matches(|c| c == '*' || c == '#').trim();
    if key.is_empty() {
        return None;
    }
    Some((key.to_string(), value.trim()))
}

/// One entry per `topic: item, item, ...` line.
pub fn parse_topics(reply: &str) -> Vec<ExplicitEntry> {
    reply
        .lines()
        .filter_map(key_value)
        .filter_map(|(topic, value)| {
            let interests: Vec<String> = value
                .split(',')
                .map(|s| s.trim().trim_end_matches('.').trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            (!interests.is_empty()).then_some(ExplicitEntry { topic, interests })
        })
        .collect()
}

/// One entry per `attribute: value` line.
pub fn parse_attributes(reply: &str) -> Vec<ImplicitEntry> {
    reply
        .lines()
        .filter_map(key_value)
        .filter_map(|(attribute, value)| {
            let value = value.trim_end_matches('.').trim();
            (!value.is_empty()).then(|| ImplicitEntry {
                attribute,
                value: value.to_string(),
            })
        })
        .collect()
}

/// Lines of a retrieval reply, bullets removed. Replies that only say there
/// is nothing relevant produce no items.
pub fn parse_retrieved_items(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(strip_marker)
        .filter(|l| !l.is_empty())
        .filter(|l| {
            let lower = l.trim_end_matches('.').to_lowercase();
            !matches!(lower.as_str(), "none" | "n/a" | "nothing" | "no relevant information")
        })
        .map(str::to_string)
        .collect()
}

fn rewrite_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:re-?written(?:\s+query)?|rewrite|refined\s+query|enriched\s+query|query|answer)\s*:\s*")
            .expect("valid regex")
    })
}

/// First non-empty line of a rewrite reply with any label prefix and
/// surrounding quotes removed. `None` when nothing usable remains.
pub fn clean_rewrite(reply: &str) -> Option<String> {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = match rewrite_label().find(line) {
        Some(m) => &line[m.end()..],
        None => line,
    };
    let cleaned = line
        .trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '`' | '“' | '”' | '‘' | '’'))
        .trim();
    (!cleaned.is_empty()).then(|| cleaned.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingParse {
    /// 1-based candidate labels, a permutation of `1..=n`.
    pub order: Vec<usize>,
    /// Set when no usable label was found and the identity order was used.
    pub parse_failed: bool,
}

fn first_number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").expect("valid regex"))
}

fn bracketed_number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").expect("valid regex"))
}

fn label_in(fragment: &str) -> Option<usize> {
    if let Some(c) = bracketed_number().captures(fragment) {
        return c[1].parse().ok();
    }
    first_number().find(fragment)?.as_str().parse().ok()
}

/// Reads an ordering such as `3 > 1 > 2`, `[3] > [1]`, or a numbered list
/// of `[k]` labels. Out-of-range and repeated labels are ignored; labels the
/// reply never mentions follow in their original order.
pub fn parse_ranking(reply: &str, n: usize) -> RankingParse {
    let fragments: Vec<&str> = if reply.contains('>') {
        reply.split('>').collect()
    } else {
        reply
            .lines()
            .map(strip_marker)
            .filter(|l| !l.is_empty())
            .collect()
    };
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for frag in fragments {
        if let Some(label) = label_in(frag) {
            if (1..=n).contains(&label) && !seen[label - 1] {
                seen[label - 1] = true;
                order.push(label);
            }
        }
    }
    let parse_failed = order.is_empty() && n > 0;
    order.extend((1..=n).filter(|&l| !seen[l - 1]));
    RankingParse {
        order,
        parse_failed,
    }
}

/// Content of the last `[Header]` block of a rendered prompt, or the whole
/// prompt when it has no sections.
pub fn last_bracketed_section(prompt: &str) -> String {
    let mut last: Option<String> = None;
    for block in prompt.split("\n\n") {
        let mut lines = block.trim_start_matches('\n').lines();
        if let Some(head) = lines.next() {
            let head = head.trim();
            if head.len() > 2 && head.starts_with('[') && head.ends_with(']') {
                last = Some(lines.collect::<Vec<_>>().join("\n").trim().to_string());
            }
        }
    }
    last.unwrap_or_else(|| prompt.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topics_follow_the_line_grammar() {
        assert!(parse_topics("").is_empty());
        assert_eq!(
            parse_topics("Shoes: sandals, designer shoes"),
            vec![ExplicitEntry {
                topic: "Shoes".into(),
                interests: vec!["sandals".into(), "designer shoes".into()],
            }]
        );
        assert!(parse_topics("no colon here").is_empty());
        let three = "a: x, y\n- b: z\n1. c: w\nnoise";
        assert_eq!(parse_topics(three).len(), 3);
    }

    #[test]
    fn attributes_are_single_valued() {
        assert_eq!(
            parse_attributes("Gender: Female"),
            vec![ImplicitEntry {
                attribute: "Gender".into(),
                value: "Female".into(),
            }]
        );
        assert!(parse_attributes("").is_empty());
        let age = parse_attributes("Age: teens to middle-aged");
        assert_eq!(age.len(), 1);
        assert_eq!(age[0].value, "teens to middle-aged");
    }

    #[test]
    fn rewrite_labels_and_quotes_are_stripped() {
        assert_eq!(clean_rewrite("Rewritten: X").as_deref(), Some("X"));
        assert_eq!(clean_rewrite("\"Maybelline New York make up\"").as_deref(), Some("Maybelline New York make up"));
        assert_eq!(clean_rewrite("  \n"), None);
        assert_eq!(clean_rewrite("Re-written query: cat food"), Some("cat food".into()));
    }

    #[test]
    fn ranking_completion_rule() {
        assert_eq!(parse_ranking("2 > 1", 3).order, vec![2, 1, 3]);
        let garbage = parse_ranking("I cannot help with that", 4);
        assert_eq!(garbage.order, vec![1, 2, 3, 4]);
        assert!(garbage.parse_failed);
        let identity = parse_ranking("1 > 2 > 3", 3);
        assert_eq!(identity.order, vec![1, 2, 3]);
        assert!(!identity.parse_failed);
    }

    #[test]
    fn ranking_accepts_brackets_and_lists() {
        assert_eq!(parse_ranking("[3] > [1] > [2]", 3).order, vec![3, 1, 2]);
        assert_eq!(parse_ranking("1. [2] foo\n2. [3] bar", 3).order, vec![2, 3, 1]);
        assert_eq!(parse_ranking("9 > 2 > 2 > 0", 3).order, vec![2, 1, 3]);
    }

    #[test]
    fn retrieved_items_drop_bullets_and_none() {
        assert_eq!(
            parse_retrieved_items("- Shoes: sandals\n\n-Gender: Female\nNone"),
            vec!["Shoes: sandals", "Gender: Female"]
        );
        assert!(parse_retrieved_items("None.").is_empty());
    }

    #[test]
    fn echo_section_is_the_last_block() {
        let p = "[Query]\ncats\n\n[Candidate documents]\n[1] a\n[2] b\n\nPlease rank.";
        assert_eq!(last_bracketed_section(p), "[1] a\n[2] b");
        assert_eq!(last_bracketed_section("plain"), "plain");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ranking_is_always_a_permutation(reply in ".{0,200}", n in 0usize..30) {
                let mut order = parse_ranking(&reply, n).order;
                order.sort_unstable();
                prop_assert_eq!(order, (1..=n).collect::<Vec<_>>());
            }

            #[test]
            fn line_parsers_never_panic(reply in "(?s).{0,300}") {
                let _ = parse_topics(&reply);
                let _ = parse_attributes(&reply);
                let _ = parse_retrieved_items(&reply);
                let _ = clean_rewrite(&reply);
            }
        }
    }
}

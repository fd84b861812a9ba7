//! Text utilities shared by every stage: tokenization, query normalization,
//! and the token-count heuristic used for prompt budgets.

/// Lowercases and splits on any non-alphanumeric character. No stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Like [`tokenize`] but drops terms found in `stopwords`.
pub fn tokenize_with_stopwords(text: &str, stopwords: &[&str]) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !stopwords.contains(&t.as_str()))
        .collect()
}

/// A small English stopword list, available to callers that opt in.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "of", "on",
    "or", "that", "the", "to", "with",
];

/// Canonical form of a query used as the re-finding key: lowercase,
/// punctuation stripped, whitespace collapsed.
pub fn normalize_query(query: &str) -> String {
    let mut out = String::with_capacity(query.len());
    for word in query
        .split(|c: char| c.is_whitespace())
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word);
    }
    out
}

/// Whitespace token count scaled by 1.3, rounded up. Integer arithmetic keeps
/// the estimate exact (`ceil(13 * words / 10)`).
pub fn estimate_tokens(text: &str) -> usize {
    tokens_for_words(text.split_whitespace().count())
}

pub fn tokens_for_words(words: usize) -> usize {
    (13 * words).div_ceil(10)
}

/// Largest word count whose estimate still fits in `budget` tokens.
pub fn words_for_tokens(budget: usize) -> usize {
    10 * budget / 13
}

/// Keeps the leading whitespace tokens of `text` so that the estimate is at
/// most `budget`.
pub fn head_truncate(text: &str, budget: usize) -> String {
    let keep = words_for_tokens(budget);
    text.split_whitespace()
        .take(keep)
        .collect::<Vec<_>>()
        .join(" ")
}

/// First `max_chars` characters of `text`, on a char boundary.
pub fn char_prefix(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

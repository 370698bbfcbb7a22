//! Whitespace tokenization shared by context budgeting, prompt budgeting
//! and the reply-overlap metric.

/// Iterates over the maximal runs of non-whitespace characters in `text`.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// Number of whitespace-delimited tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    tokens(text).count()
}

/// Lowercases a token and strips leading and trailing punctuation.
/// Returns `None` when nothing is left.
pub fn normalize_token(token: &str) -> Option<String> {
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

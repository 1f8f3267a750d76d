//! Whitespace tokenization and the small text predicates shared by
//! retrieval, context budgeting and environment verification.

use std::collections::BTreeSet;

/// Whitespace-separated chunks. This is the token count used for context
/// budgets.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn token_count(text: &str) -> usize {
    tokens(text).count()
}

fn lowercase_token_set(text: &str) -> BTreeSet<String> {
    tokens(text).map(str::to_lowercase).collect()
}

/// Jaccard overlap between the lowercase token sets of two strings.
/// Two empty strings have overlap 0.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let left = lowercase_token_set(a);
    let right = lowercase_token_set(b);
    let union = left.union(&right).count();
    if union == 0 {
        return 0.0;
    }
    left.intersection(&right).count() as f64 / union as f64
}

/// True when the token sequence of `needle` appears contiguously in
/// `haystack`. An empty needle never matches.
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let hay: Vec<&str> = tokens(haystack).collect();
    let pat: Vec<&str> = tokens(needle).collect();
    if pat.is_empty() || pat.len() > hay.len() {
        return false;
    }
    hay.windows(pat.len()).any(|w| w == pat.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_whitespace_chunks() {
        assert_eq!(token_count(""), 0);
        assert_eq!(token_count("  a  b\tc\n"), 3);
    }

    #[test]
    fn jaccard_is_case_insensitive() {
        assert_eq!(jaccard("Loader PATH", "path loader"), 1.0);
        assert_eq!(jaccard("", ""), 0.0);
        assert!((jaccard("a b", "b c") - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn phrase_matches_whole_tokens() {
        assert!(contains_phrase("loader = data/loader.py", "data/loader.py"));
        assert!(!contains_phrase("loader = utils/loader.py", "data/loader.py"));
        assert!(!contains_phrase("v13", "3"));
        assert!(contains_phrase("a b c", "b c"));
        assert!(!contains_phrase("a b c", ""));
    }
}

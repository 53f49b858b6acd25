//! Word-level tokenization shared by catalog checks and the mock backend.

/// Lowercased alphanumeric words of `s`.
pub fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Number of (possibly overlapping) occurrences of `needle` as a contiguous
/// token run in `haystack`. An empty needle never matches.
pub fn count_phrase(haystack: &[String], needle: &[String]) -> usize {
    if needle.is_empty() || needle.len() > haystack.len() {
        return 0;
    }
    haystack.windows(needle.len()).filter(|w| *w == needle).count()
}

/// Whether `phrase` occurs in `text` on word boundaries, ignoring case.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    count_phrase(&tokens(text), &tokens(phrase)) > 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phrase_counting() {
        let h = tokens("Olive Grove, in the style of Vincent van Gogh. olive grove!");
        assert_eq!(count_phrase(&h, &tokens("Olive Grove")), 2);
        assert_eq!(count_phrase(&h, &tokens("van gogh")), 1);
        assert_eq!(count_phrase(&h, &tokens("")), 0);
        assert!(!contains_phrase("a grove", "X"));
        assert!(contains_phrase("Number 48, x", "x"));
    }
}

//! Tokenization and sentence helpers shared by the index and the reference providers.

/// Lowercased tokens split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// The first `n` whitespace tokens of `text`, re-joined with single spaces.
pub fn first_tokens(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

/// Splits on `.`, `!`, `?` followed by whitespace (or end of text) and on newlines.
/// Terminal punctuation stays with its sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut start = 0;
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        for (i, &(pos, c)) in chars.iter().enumerate() {
            if matches!(c, '.' | '!' | '?') {
                let at_end = i + 1 == chars.len();
                let followed_by_space = chars.get(i + 1).is_some_and(|&(_, n)| n.is_whitespace());
                if at_end || followed_by_space {
                    let end = pos + c.len_utf8();
                    let s = line[start..end].trim();
                    if !s.is_empty() {
                        out.push(s.to_string());
                    }
                    start = end;
                }
            }
        }
        let rest = line[start..].trim();
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
    }
    out
}

pub fn first_sentence(text: &str) -> String {
    split_sentences(text).into_iter().next().unwrap_or_default()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "am", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "but", "by", "can", "could", "current", "currently", "did", "do", "does", "doing",
    "for", "from", "had", "has", "have", "he", "her", "him", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "just", "me", "my", "now", "of", "on", "or", "our", "she", "so",
    "than", "that", "the", "their", "them", "then", "there", "they", "this", "to", "up", "us",
    "was", "we", "were", "what", "when", "where", "which", "who", "whom", "why", "will", "with",
    "would", "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokens minus stopwords, order preserved, duplicates removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t) && seen.insert(t.clone()))
        .collect()
}

/// Lowercase, strip punctuation and articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .filter(|t| !matches!(t.as_str(), "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokenizes_on_punctuation() {
        assert_eq!(tokenize("The Cat's hat, 2022-04-12!"), ["the", "cat", "s", "hat", "2022", "04", "12"]);
        assert!(tokenize(" ,.;").is_empty());
    }

    #[test]
    fn sentences() {
        let s = split_sentences("On 2022-04-12, A met B. They talked!\n- A: is 3.5 ok? yes");
        assert_eq!(s, ["On 2022-04-12, A met B.", "They talked!", "- A: is 3.5 ok?", "yes"]);
        assert_eq!(first_sentence("Only one"), "Only one");
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer("The  Blue-House."), "blue house");
    }
}

//! Lightweight tokenization shared by the hash embedder, keyword
//! sanitization, and coherence scoring.

use std::collections::HashMap;

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "been", "before", "but", "by", "can", "could", "did", "do", "does", "for", "from", "had",
    "has", "have", "he", "her", "here", "him", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "just", "me", "more", "my", "no", "not", "now", "of", "on", "or", "our", "out", "rt",
    "she", "so", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "to", "up", "us", "via", "was", "we", "were", "what", "when", "which", "who", "will", "with",
    "would", "you", "your", "de", "la", "le", "les", "des", "du", "et", "un", "une", "est", "en",
    "pour", "que", "qui", "dans", "sur", "pas", "au", "ce",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

fn is_url(word: &str) -> bool {
    let w = word.to_ascii_lowercase();
    w.starts_with("http://") || w.starts_with("https://") || w.starts_with("www.")
}

/// Lowercased word tokens with URLs and `@mentions` removed. Hashtags keep
/// their body (`#Nilam` becomes `nilam`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if is_url(word) || word.starts_with('@') {
            continue;
        }
        for piece in word.split(|c: char| !c.is_alphanumeric()) {
            if !piece.is_empty() {
                out.push(piece.to_lowercase());
            }
        }
    }
    out
}

/// Most frequent non-stopword tokens, ties broken by first occurrence.
pub fn top_terms(text: &str, limit: usize) -> Vec<String> {
    let tokens = tokenize(text);
    let ranked = rank_by_frequency(tokens.iter().filter(|t| !is_stopword(t)).cloned());
    if !ranked.is_empty() {
        return ranked.into_iter().take(limit).collect();
    }
    let ranked = rank_by_frequency(tokens.into_iter());
    if !ranked.is_empty() {
        return ranked.into_iter().take(limit).collect();
    }
    // Nothing alphanumeric survived; fall back to raw words.
    rank_by_frequency(text.split_whitespace().map(str::to_lowercase))
        .into_iter()
        .take(limit)
        .collect()
}

fn rank_by_frequency(tokens: impl Iterator<Item = String>) -> Vec<String> {
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (pos, tok) in tokens.enumerate() {
        counts.entry(tok).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(String, usize, usize)> = counts
        .into_iter()
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.into_iter().map(|(t, _, _)| t).collect()
}

//! Small text utilities: tokenizing, plural folding, answer normalization.

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from", "has", "have",
    "how", "i", "in", "is", "it", "its", "many", "me", "much", "of", "on", "or", "room", "scene", "show", "that",
    "the", "their", "there", "these", "this", "those", "to", "was", "what", "where", "which", "who", "with",
    "you",
];

pub fn is_stopword(w: &str) -> bool {
    STOPWORDS.binary_search(&w).is_ok()
}

/// Lowercase alphanumeric words, in order.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Folds simple English plurals: "chairs" → "chair", "boxes" → "box",
/// "shelves" → "shelf". Words of three letters or fewer and "-ss" endings are
/// left alone.
pub fn singular(word: &str) -> String {
    let w = word;
    if w.len() <= 3 || w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") {
        return w.to_string();
    }
    if let Some(stem) = w.strip_suffix("ves") {
        return format!("{stem}f");
    }
    if let Some(stem) = w.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["ches", "shes", "xes", "sses", "zes"] {
        if w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    if let Some(stem) = w.strip_suffix('s') {
        return stem.to_string();
    }
    w.to_string()
}

/// Content tokens: words minus stopwords and pure numbers, plural-folded.
pub fn content_tokens(text: &str) -> Vec<String> {
    words(text)
        .into_iter()
        .filter(|w| !is_stopword(w) && w.parse::<f64>().is_err())
        .map(|w| singular(&w))
        .collect()
}

/// Lowercase, trim, drop trailing punctuation and a leading article.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let trimmed = lowered.trim_end_matches(|c: char| c.is_ascii_punctuation()).trim();
    let mut parts: Vec<&str> = trimmed.split_whitespace().collect();
    if let Some(first) = parts.first() {
        if matches!(*first, "a" | "an" | "the") {
            parts.remove(0);
        }
    }
    parts.join(" ")
}

/// True when `phrase` (space separated words) occurs in `words` as a
/// contiguous run; returns the start index.
pub fn find_phrase(words: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > words.len() {
        return None;
    }
    (0..=words.len() - phrase.len()).find(|&i| words[i..i + phrase.len()] == *phrase)
}

/// `word` prefixed with "a" or "an" by its first letter.
pub fn with_article(word: &str) -> String {
    let vowel = word.chars().next().is_some_and(|c| "aeiouAEIOU".contains(c));
    format!("{} {word}", if vowel { "an" } else { "a" })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_are_sorted() {
        let mut s = STOPWORDS.to_vec();
        s.sort_unstable();
        assert_eq!(s, STOPWORDS);
    }

    #[test]
    fn plurals() {
        assert_eq!(singular("chairs"), "chair");
        assert_eq!(singular("boxes"), "box");
        assert_eq!(singular("shelves"), "shelf");
        assert_eq!(singular("benches"), "bench");
        assert_eq!(singular("glass"), "glass");
        assert_eq!(singular("bus"), "bus");
        assert_eq!(singular("mug"), "mug");
    }

    #[test]
    fn content_tokens_skip_function_words() {
        assert_eq!(content_tokens("How many chairs are there in the room?"), vec!["chair"]);
        assert_eq!(content_tokens("mug 3 at 0.5"), vec!["mug"]);
    }

    #[test]
    fn answers_normalize() {
        assert_eq!(normalize_answer("The table."), "table");
        assert_eq!(normalize_answer("  2 "), "2");
    }
}

use serde::{Deserialize, Serialize};

/// Lookup form of a term: lowercased, whitespace collapsed, plus its
/// alphanumeric tokens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NormalizedTerm {
    pub text: String,
    pub tokens: Vec<String>,
}

impl NormalizedTerm {
    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

/// Unicode-aware lowercasing and whitespace collapsing. Tokens are the
/// maximal runs of alphanumeric codepoints; diacritics are kept as-is.
pub fn normalize_term(raw: &str) -> NormalizedTerm {
    let lowered = raw.to_lowercase();
    let text = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let tokens = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    NormalizedTerm { text, tokens }
}

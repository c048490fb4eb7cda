//! Tokenized text.

use serde::{Deserialize, Serialize};

/// Stable 64-bit identifier of a token string (FNV-1a of its UTF-8 bytes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token(pub u64);

impl Token {
    pub fn of(s: &str) -> Self {
        Token(fnv1a(s.as_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A prompt or an output: the original string plus its deterministic tokenization.
///
/// Serializes as the raw string; tokens are recomputed on load.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Text {
    raw: String,
    tokens: Vec<Token>,
}

impl Text {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = split_words(&raw).iter().map(|w| Token::of(w)).collect();
        Text { raw, tokens }
    }

    /// Builds a text from words, joined by single spaces.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let raw = words
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" ");
        Text::new(raw)
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Token count, the length φ used by the length-ratio similarity.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token strings in order.
    pub fn words(&self) -> Vec<&str> {
        split_words(&self.raw)
    }

    /// `self ⊕ other`, the concatenation of the two token streams.
    pub fn concat(&self, other: &Text) -> Text {
        match (self.raw.is_empty(), other.raw.is_empty()) {
            (true, _) => other.clone(),
            (_, true) => self.clone(),
            _ => Text::new(format!("{} {}", self.raw, other.raw)),
        }
    }
}

impl From<String> for Text {
    fn from(raw: String) -> Self {
        Text::new(raw)
    }
}

impl From<&str> for Text {
    fn from(raw: &str) -> Self {
        Text::new(raw)
    }
}

impl From<Text> for String {
    fn from(t: Text) -> String {
        t.raw
    }
}

/// Whitespace split; a chunk made only of non-ASCII scalars (unsegmented
/// scripts such as CJK) is split into one token per scalar.
fn split_words(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in raw.split_whitespace() {
        if chunk.chars().count() > 1 && !chunk.chars().any(|c| c.is_ascii()) {
            out.extend(
                chunk
                    .char_indices()
                    .map(|(i, c)| &chunk[i..i + c.len_utf8()]),
            );
        } else {
            out.push(chunk);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_tokenization() {
        let t = Text::new("the  quick\tbrown\nfox");
        assert_eq!(t.len(), 4);
        assert_eq!(t.words(), vec!["the", "quick", "brown", "fox"]);
        assert_eq!(t.tokens()[0], Token::of("the"));
    }

    #[test]
    fn unsegmented_text_falls_back_to_scalars() {
        let t = Text::new("你好世界 ok");
        assert_eq!(t.words(), vec!["你", "好", "世", "界", "ok"]);
    }

    #[test]
    fn same_raw_same_tokens() {
        assert_eq!(Text::new("a b c"), Text::new("a b c"));
        assert!(!Text::new("x").is_empty());
        assert!(Text::new("   ").is_empty());
    }

    #[test]
    fn concat_joins_token_streams() {
        let c = Text::new("a b").concat(&Text::new("c"));
        assert_eq!(c.words(), vec!["a", "b", "c"]);
        assert_eq!(Text::new("").concat(&Text::new("c")), Text::new("c"));
    }

    #[test]
    fn serializes_as_raw_string() {
        let t = Text::new("hello world");
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "\"hello world\"");
        let back: Text = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}

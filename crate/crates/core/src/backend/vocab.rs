use std::collections::HashMap;

use crate::dist::TokenId;
use crate::linguistics::split_words;

pub const EOS_SURFACE: &str = "<eos>";
pub const UNK_SURFACE: &str = "<unk>";

/// Marker on subword pieces that continue into the next piece (`sleep@@ ing`).
const CONTINUATION: &str = "@@";

/// Whitespace + punctuation tokenizer over a fixed word vocabulary.
///
/// Token 0 is `<eos>` and token 1 is `<unk>`. Words missing from the vocabulary
/// are segmented greedily into `piece@@` continuation pieces when possible and
/// otherwise map to `<unk>`. `detokenize(tokenize(s))` reproduces `s` for
/// in-vocabulary text up to whitespace normalization: single spaces between
/// words, none before closing punctuation.
#[derive(Debug, Clone)]
pub struct WordVocab {
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl WordVocab {
    pub const EOS: TokenId = 0;
    pub const UNK: TokenId = 1;

    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self { surfaces: Vec::new(), index: HashMap::new() };
        v.insert(EOS_SURFACE);
        v.insert(UNK_SURFACE);
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    /// Adds `word` if absent and returns its id.
    pub fn insert(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.surfaces.len() as TokenId;
        self.surfaces.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.surfaces.iter().enumerate().map(|(i, s)| (i as TokenId, s.as_str()))
    }

    /// Splits text into word and punctuation pieces (the pre-tokenization step).
    pub fn pretokenize(text: &str) -> Vec<&str> {
        split_words(text)
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in Self::pretokenize(text) {
            self.encode_word(piece, &mut out);
        }
        out
    }

    fn encode_word(&self, word: &str, out: &mut Vec<TokenId>) {
        if let Some(id) = self.id(word) {
            out.push(id);
            return;
        }
        let lower = word.to_lowercase();
        if let Some(id) = self.id(&lower) {
            out.push(id);
            return;
        }
        if let Some(pieces) = self.segment(&lower) {
            out.extend(pieces);
            return;
        }
        out.push(Self::UNK);
    }

    /// Greedy longest-prefix segmentation into continuation pieces.
    fn segment(&self, word: &str) -> Option<Vec<TokenId>> {
        let mut pieces = Vec::new();
        let mut rest = word;
        while !rest.is_empty() {
            let mut ends: Vec<usize> = rest.char_indices().map(|(i, _)| i).skip(1).collect();
            ends.push(rest.len());
            let found = ends.into_iter().rev().find_map(|end| {
                let head = &rest[..end];
                let id = if end == rest.len() {
                    self.id(head)
                } else {
                    self.id(&format!("{head}{CONTINUATION}"))
                };
                id.map(|id| (id, end))
            });
            let (id, end) = found?;
            pieces.push(id);
            rest = &rest[end..];
        }
        Some(pieces)
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        let mut glue_next = true;
        for &t in tokens {
            if t == Self::EOS {
                continue;
            }
            let surface = self.surface(t).unwrap_or(UNK_SURFACE);
            let (text, continues) = match surface.strip_suffix(CONTINUATION) {
                Some(stem) if !stem.is_empty() => (stem, true),
                _ => (surface, false),
            };
            if !glue_next && !attaches_left(text) {
                out.push(' ');
            }
            out.push_str(text);
            glue_next = continues || attaches_right(text);
        }
        out
    }

    pub fn ends_word(&self, token: TokenId) -> bool {
        self.surface(token).is_none_or(|s| !(s.len() > CONTINUATION.len() && s.ends_with(CONTINUATION)))
    }
}

fn attaches_left(piece: &str) -> bool {
    matches!(piece, "." | "," | "!" | "?" | ";" | ":" | ")" | "]" | "%" | "'s" | "n't")
}

fn attaches_right(piece: &str) -> bool {
    matches!(piece, "(" | "[")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> WordVocab {
        WordVocab::new(["a", "cat", ".", "red", "car", "sleep@@", "ing", "3.5", "m", "tall", "it", "is"])
    }

    #[test]
    fn empty_round_trip() {
        let v = vocab();
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.detokenize(&[]), "");
    }

    #[test]
    fn ascii_round_trip() {
        let v = vocab();
        let t = v.tokenize("a cat.");
        assert_eq!(t.len(), 3);
        assert_eq!(v.detokenize(&t), "a cat.");
        assert_eq!(v.detokenize(&v.tokenize("It is 3.5 m tall.")), "it is 3.5 m tall.");
    }

    #[test]
    fn whitespace_tokenizer_counts_words() {
        assert_eq!(vocab().tokenize("red car").len(), 2);
        assert_eq!(vocab().tokenize("red   car").len(), 2);
    }

    #[test]
    fn continuation_pieces() {
        let v = vocab();
        let t = v.tokenize("a cat sleeping");
        assert_eq!(t.len(), 4);
        assert!(!v.ends_word(t[2]));
        assert!(v.ends_word(t[3]));
        assert_eq!(v.detokenize(&t), "a cat sleeping");
    }

    #[test]
    fn unknown_words_and_eos() {
        let v = vocab();
        assert_eq!(v.tokenize("zebra"), vec![WordVocab::UNK]);
        assert_eq!(v.detokenize(&[v.id("cat").unwrap(), WordVocab::EOS]), "cat");
    }
}

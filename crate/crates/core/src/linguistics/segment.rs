use std::collections::HashSet;
use std::path::Path;

use once_cell::sync::Lazy;

use super::LinguisticsError;

const BUILTIN_ABBREVIATIONS: &str = include_str!("../../data/abbreviations.txt");

static BUILTIN: Lazy<SentenceSegmenter> = Lazy::new(|| SentenceSegmenter::from_list(BUILTIN_ABBREVIATIONS));

/// Rule-based sentence splitter.
///
/// A sentence ends at `.`, `!` or `?` (optionally followed by more terminators
/// and closing quotes or brackets) when the next character is whitespace or
/// the end of the text. A period that closes a listed abbreviation does not
/// end a sentence; decimal points never qualify because a digit follows them.
#[derive(Debug, Clone)]
pub struct SentenceSegmenter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSegmenter {
    fn default() -> Self {
        BUILTIN.clone()
    }
}

impl SentenceSegmenter {
    pub fn builtin() -> &'static SentenceSegmenter {
        &BUILTIN
    }

    /// One abbreviation per line (with its trailing period); `#` starts a
    /// comment line.
    pub fn from_list(text: &str) -> Self {
        let abbreviations = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.split('\t').next().unwrap_or(l).to_lowercase())
            .collect();
        Self { abbreviations }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LinguisticsError> {
        Ok(Self::from_list(&std::fs::read_to_string(path)?))
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(&word.to_lowercase())
    }

    /// Byte offsets just past every completed sentence.
    pub fn boundaries(&self, text: &str) -> Vec<usize> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            if !matches!(c, b'.' | b'!' | b'?') {
                i += 1;
                continue;
            }
            let term = i;
            let mut end = i + 1;
            while end < bytes.len() && matches!(bytes[end], b'.' | b'!' | b'?' | b'"' | b'\'' | b')' | b']') {
                end += 1;
            }
            // closing curly quotes
            while text[end..].starts_with('\u{201d}') || text[end..].starts_with('\u{2019}') {
                end += 3;
            }
            let followed_ok = end == bytes.len() || text[end..].chars().next().is_some_and(char::is_whitespace);
            if followed_ok && !(c == b'.' && end == term + 1 && self.ends_abbreviation(text, term)) {
                out.push(end);
            }
            i = end;
        }
        out
    }

    fn ends_abbreviation(&self, text: &str, period: usize) -> bool {
        let start = text[..period].rfind(char::is_whitespace).map_or(0, |p| p + 1);
        let word = text[start..=period].trim_start_matches(['(', '"', '\'', '[', '\u{201c}']);
        self.is_abbreviation(word)
    }

    /// End offset of the most recent completed sentence, if any.
    pub fn sentence_boundary(&self, text: &str) -> Option<usize> {
        self.boundaries(text).last().copied()
    }

    /// Whether `text` ends exactly at a sentence boundary (ignoring trailing
    /// whitespace).
    pub fn ends_sentence(&self, text: &str) -> bool {
        let trimmed = text.trim_end();
        !trimmed.is_empty() && self.sentence_boundary(trimmed) == Some(trimmed.len())
    }

    /// Sentences of `text`, trimmed. A non-empty unterminated tail counts as a
    /// sentence.
    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut start = 0;
        for end in self.boundaries(text) {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
        let tail = text[start..].trim();
        if !tail.is_empty() {
            out.push(tail);
        }
        out
    }

    pub fn count(&self, text: &str) -> usize {
        self.split(text).len()
    }
}

pub fn sentence_boundary(text: &str) -> Option<usize> {
    SentenceSegmenter::builtin().sentence_boundary(text)
}

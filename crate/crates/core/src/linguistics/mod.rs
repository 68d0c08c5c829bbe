//! POS tagging, sentence segmentation and lookahead tagging.

mod lookahead;
mod pos;
mod segment;

use std::sync::Arc;

use once_cell::sync::Lazy;
use regex::Regex;
use thiserror::Error;

pub use lookahead::{lookahead_pos, LookaheadTag, MAX_LOOKAHEAD_TOKENS};
pub use pos::{is_image_related, PosTag, PosTagger, TaggerModel};
pub use segment::{sentence_boundary, SentenceSegmenter};

#[derive(Debug, Error)]
pub enum LinguisticsError {
    #[error("unknown POS tag {0:?}")]
    UnknownTag(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

static WORD: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\d+(?:\.\d+)?|[\p{L}\p{N}][\p{L}\p{N}'’-]*|[^\s\p{L}\p{N}]").unwrap());

/// Splits text into words and single punctuation marks.
pub fn split_words(text: &str) -> Vec<&str> {
    WORD.find_iter(text).map(|m| m.as_str()).collect()
}

/// Tagger and segmenter used together by the summary-guided decoder and the
/// extractive summarizer.
#[derive(Clone)]
pub struct Linguistics {
    pub tagger: Arc<dyn PosTagger>,
    pub segmenter: SentenceSegmenter,
}

impl Default for Linguistics {
    fn default() -> Self {
        Self { tagger: Arc::new(TaggerModel::builtin().clone()), segmenter: SentenceSegmenter::default() }
    }
}

impl Linguistics {
    pub fn new(tagger: Arc<dyn PosTagger>, segmenter: SentenceSegmenter) -> Self {
        Self { tagger, segmenter }
    }

    /// Words of `text` with their tags.
    pub fn tag_text<'a>(&self, text: &'a str) -> Vec<(&'a str, PosTag)> {
        let words = split_words(text);
        let tags = self.tagger.tag(&words);
        words.into_iter().zip(tags).collect()
    }
}

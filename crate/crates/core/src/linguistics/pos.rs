use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use super::LinguisticsError;

/// Universal POS tag set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Propn,
    Adj,
    Num,
    Verb,
    Aux,
    Adp,
    Det,
    Part,
    Pron,
    Adv,
    Cconj,
    Sconj,
    Intj,
    Punct,
    Sym,
    X,
}

impl PosTag {
    pub const ALL: [PosTag; 17] = [
        PosTag::Noun,
        PosTag::Propn,
        PosTag::Adj,
        PosTag::Num,
        PosTag::Verb,
        PosTag::Aux,
        PosTag::Adp,
        PosTag::Det,
        PosTag::Part,
        PosTag::Pron,
        PosTag::Adv,
        PosTag::Cconj,
        PosTag::Sconj,
        PosTag::Intj,
        PosTag::Punct,
        PosTag::Sym,
        PosTag::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Propn => "PROPN",
            PosTag::Adj => "ADJ",
            PosTag::Num => "NUM",
            PosTag::Verb => "VERB",
            PosTag::Aux => "AUX",
            PosTag::Adp => "ADP",
            PosTag::Det => "DET",
            PosTag::Part => "PART",
            PosTag::Pron => "PRON",
            PosTag::Adv => "ADV",
            PosTag::Cconj => "CCONJ",
            PosTag::Sconj => "SCONJ",
            PosTag::Intj => "INTJ",
            PosTag::Punct => "PUNCT",
            PosTag::Sym => "SYM",
            PosTag::X => "X",
        }
    }

    /// Tags whose tokens need visual grounding: PROPN, ADJ, NOUN and NUM.
    pub fn is_image_related(self) -> bool {
        matches!(self, PosTag::Propn | PosTag::Adj | PosTag::Noun | PosTag::Num)
    }
}

pub fn is_image_related(tag: PosTag) -> bool {
    tag.is_image_related()
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = LinguisticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PosTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| LinguisticsError::UnknownTag(s.to_string()))
    }
}

/// Anything that assigns one tag per word. Implementations must be
/// deterministic and total.
pub trait PosTagger: Send + Sync {
    fn tag(&self, words: &[&str]) -> Vec<PosTag>;
}

const BUILTIN_LEXICON: &str = include_str!("../../data/lexicon.tsv");
const BUILTIN_SUFFIXES: &str = include_str!("../../data/suffix_rules.tsv");

static BUILTIN: Lazy<TaggerModel> = Lazy::new(|| {
    TaggerModel::from_tsv(BUILTIN_LEXICON, BUILTIN_SUFFIXES, PosTag::Noun).expect("bundled lexicon parses")
});

/// Lexicon + suffix-rule tagger.
///
/// Resolution order for each word: lexicon (case-insensitive), word shape
/// (digits, punctuation, symbols), capitalized word away from sentence start
/// (PROPN), suffix rules in file order, then `default_tag`.
#[derive(Debug, Clone)]
pub struct TaggerModel {
    lexicon: HashMap<String, PosTag>,
    suffix_rules: Vec<(String, PosTag)>,
    default_tag: PosTag,
}

impl TaggerModel {
    /// The bundled model, parsed once.
    pub fn builtin() -> &'static TaggerModel {
        &BUILTIN
    }

    pub fn from_tsv(lexicon: &str, suffix_rules: &str, default_tag: PosTag) -> Result<Self, LinguisticsError> {
        let lexicon = parse_pairs(lexicon)?.into_iter().map(|(w, t)| (w.to_lowercase(), t)).collect();
        let suffix_rules = parse_pairs(suffix_rules)?;
        Ok(Self { lexicon, suffix_rules, default_tag })
    }

    pub fn load(lexicon: impl AsRef<Path>, suffix_rules: impl AsRef<Path>, default_tag: PosTag) -> Result<Self, LinguisticsError> {
        let lex = std::fs::read_to_string(lexicon)?;
        let suf = std::fs::read_to_string(suffix_rules)?;
        Self::from_tsv(&lex, &suf, default_tag)
    }

    pub fn lexicon_len(&self) -> usize {
        self.lexicon.len()
    }

    pub fn lookup(&self, word: &str) -> Option<PosTag> {
        self.lexicon.get(&word.to_lowercase()).copied()
    }

    fn tag_word(&self, word: &str, sentence_initial: bool) -> PosTag {
        if let Some(tag) = self.lookup(word) {
            return tag;
        }
        if let Some(tag) = shape_tag(word) {
            return tag;
        }
        if !sentence_initial && word.chars().next().is_some_and(char::is_uppercase) {
            return PosTag::Propn;
        }
        let lower = word.to_lowercase();
        self.suffix_rules
            .iter()
            .find(|(suffix, _)| lower.len() > suffix.len() && lower.ends_with(suffix.as_str()))
            .map_or(self.default_tag, |(_, tag)| *tag)
    }
}

impl PosTagger for TaggerModel {
    fn tag(&self, words: &[&str]) -> Vec<PosTag> {
        let mut initial = true;
        words
            .iter()
            .map(|w| {
                let tag = self.tag_word(w, initial);
                initial = matches!(*w, "." | "!" | "?");
                tag
            })
            .collect()
    }
}

fn shape_tag(word: &str) -> Option<PosTag> {
    let mut chars = word.chars();
    let first = chars.next()?;
    if first.is_ascii_digit() && word.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | ',')) {
        return Some(PosTag::Num);
    }
    if word.chars().all(|c| !c.is_alphanumeric()) {
        let symbolic = word.chars().all(|c| matches!(c, '$' | '%' | '&' | '+' | '=' | '<' | '>' | '@' | '#' | '*' | '/' | '€' | '£'));
        return Some(if symbolic { PosTag::Sym } else { PosTag::Punct });
    }
    None
}

fn parse_pairs(text: &str) -> Result<Vec<(String, PosTag)>, LinguisticsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, tag) = line
            .split_once('\t')
            .ok_or_else(|| LinguisticsError::Parse { line: i + 1, message: "expected word<TAB>tag".into() })?;
        let tag = tag.parse().map_err(|_| LinguisticsError::Parse { line: i + 1, message: format!("unknown tag {tag:?}") })?;
        out.push((word.to_string(), tag));
    }
    Ok(out)
}

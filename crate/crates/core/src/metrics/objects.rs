use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::linguistics::split_words;

const BUILTIN_VOCAB: &str = include_str!("../../data/coco_vocab.json");

static BUILTIN: Lazy<ObjectVocabulary> =
    Lazy::new(|| ObjectVocabulary::from_json(BUILTIN_VOCAB).expect("bundled object vocabulary parses"));

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("person", "people"),
    ("child", "children"),
    ("mouse", "mice"),
    ("knife", "knives"),
    ("foot", "feet"),
    ("goose", "geese"),
    ("ox", "oxen"),
    ("calf", "calves"),
    ("shelf", "shelves"),
];

/// Object categories and the surface forms that refer to them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectVocabulary {
    categories: BTreeSet<String>,
    synonyms: HashMap<String, String>,
    /// Longest synonym, in words.
    max_words: usize,
}

/// An object mentioned in a caption, at its first 1-based word position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub object: String,
    pub position: usize,
}

impl ObjectVocabulary {
    /// The bundled 80-category MSCOCO-style vocabulary.
    pub fn builtin() -> &'static ObjectVocabulary {
        &BUILTIN
    }

    /// Builds from `category -> [synonyms]`. Every category is its own
    /// synonym, and plural forms are added for every synonym unless they
    /// would collide with an explicit entry. Matching is case-insensitive.
    pub fn new(entries: &BTreeMap<String, Vec<String>>) -> Result<Self, MetricsError> {
        let mut synonyms: HashMap<String, String> = HashMap::new();
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        for (category, words) in entries {
            let category_key = norm(category);
            for word in std::iter::once(category).chain(words) {
                let w = norm(word);
                if w.is_empty() {
                    continue;
                }
                match synonyms.get(&w) {
                    Some(existing) if *existing != category_key => {
                        return Err(MetricsError::AmbiguousSynonym { word: w, first: existing.clone(), second: category_key });
                    }
                    _ => {
                        synonyms.insert(w, category_key.clone());
                    }
                }
            }
        }
        let explicit: Vec<(String, String)> = synonyms.iter().map(|(w, c)| (w.clone(), c.clone())).collect();
        for (word, category) in explicit {
            let plural = pluralize(&word);
            synonyms.entry(plural).or_insert(category);
        }
        let categories = entries.keys().map(|c| norm(c)).collect();
        let max_words = synonyms.keys().map(|k| k.split(' ').count()).max().unwrap_or(1);
        Ok(Self { categories, synonyms, max_words })
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let entries: BTreeMap<String, Vec<String>> = serde_json::from_str(text).map_err(|e| MetricsError::Parse(e.to_string()))?;
        Self::new(&entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn categories(&self) -> &BTreeSet<String> {
        &self.categories
    }

    pub fn is_category(&self, name: &str) -> bool {
        self.categories.contains(&name.to_lowercase())
    }

    /// Category a surface form refers to.
    pub fn canonical(&self, surface: &str) -> Option<&str> {
        self.synonyms.get(&surface.to_lowercase()).map(String::as_str)
    }

    /// Objects mentioned in `caption`, deduplicated to their first mention
    /// and sorted by position. Longest synonym wins at every word.
    pub fn extract(&self, caption: &str) -> Vec<Mention> {
        let words: Vec<String> = split_words(caption)
            .into_iter()
            .filter(|w| w.chars().next().is_some_and(char::is_alphanumeric))
            .map(str::to_lowercase)
            .collect();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = (1..=self.max_words.min(words.len() - i)).rev().find_map(|n| {
                let phrase = words[i..i + n].join(" ");
                self.synonyms.get(&phrase).map(|c| (c, n))
            });
            match longest {
                Some((category, n)) => {
                    if seen.insert(category.clone()) {
                        out.push(Mention { object: category.clone(), position: i + 1 });
                    }
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}

pub fn extract_objects(caption: &str, vocab: &ObjectVocabulary) -> Vec<Mention> {
    vocab.extract(caption)
}

fn pluralize(word: &str) -> String {
    let (head, last) = match word.rsplit_once(' ') {
        Some((h, l)) => (Some(h), l),
        None => (None, word),
    };
    let plural = if let Some(&(_, p)) = IRREGULAR_PLURALS.iter().find(|(s, _)| *s == last) {
        p.to_string()
    } else if let Some(stem) = last.strip_suffix("man") {
        format!("{stem}men")
    } else if last.ends_with('y') && !last.ends_with("ay") && !last.ends_with("ey") && !last.ends_with("oy") && !last.ends_with("uy") {
        format!("{}ies", &last[..last.len() - 1])
    } else if ["s", "x", "z", "ch", "sh"].iter().any(|s| last.ends_with(s)) {
        format!("{last}es")
    } else {
        format!("{last}s")
    };
    match head {
        Some(h) => format!("{h} {plural}"),
        None => plural,
    }
}

/// Ground-truth objects per image, canonicalized through a vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Annotations(BTreeMap<String, BTreeSet<String>>);

impl Annotations {
    /// Parses `{image_id: [object names]}`; names may be any synonym.
    pub fn from_json(text: &str, vocab: &ObjectVocabulary) -> Result<Self, MetricsError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text).map_err(|e| MetricsError::Parse(e.to_string()))?;
        Self::new(raw, vocab)
    }

    pub fn load(path: impl AsRef<Path>, vocab: &ObjectVocabulary) -> Result<Self, MetricsError> {
        Self::from_json(&std::fs::read_to_string(path)?, vocab)
    }

    pub fn new<I, S>(raw: impl IntoIterator<Item = (String, I)>, vocab: &ObjectVocabulary) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = BTreeMap::new();
        for (image, objects) in raw {
            let mut set = BTreeSet::new();
            for o in objects {
                let c = vocab
                    .canonical(o.as_ref())
                    .ok_or_else(|| MetricsError::UnknownObject { image: image.clone(), object: o.as_ref().to_string() })?;
                set.insert(c.to_string());
            }
            out.insert(image, set);
        }
        Ok(Self(out))
    }

    pub fn get(&self, image_id: &str) -> Option<&BTreeSet<String>> {
        self.0.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.0.iter()
    }
}

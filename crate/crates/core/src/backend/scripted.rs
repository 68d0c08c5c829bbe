//! Rule-table backend.
//!
//! A rule table is JSON, either a bare list of rules or an object with a
//! `rules` list plus optional extra `vocab` words:
//!
//! ```json
//! [
//!   {"pattern": "the", "distribution": {"cat": 0.6, "dog": 0.4}},
//!   {"pattern": "^", "image": "absent", "distribution": {"a": 1.0}},
//!   {"pattern": "", "distribution": {"<eos>": 1.0}}
//! ]
//! ```
//!
//! `pattern` is matched against the generated history: a plain pattern must be
//! a suffix of the history, a pattern starting with `^` must equal the whole
//! history. Anchored rules beat suffix rules, longer patterns beat shorter ones
//! and earlier rules win ties. Optional `image` (`any`, `present`, `absent`)
//! and `prompt_contains` filters narrow a rule further, and `attention`
//! (`[image_mass, text_mass]`) attaches an attention reading. A context that
//! matches nothing gets `<eos>` with probability one.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_context, AttentionBalance, Backend, BackendCapabilities, BackendError, GenerationContext, StepResult, WordVocab};
use crate::dist::{TokenDistribution, TokenId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageCondition {
    #[default]
    Any,
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub pattern: String,
    #[serde(default)]
    pub image: ImageCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    pub distribution: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<(f64, f64)>,
}

impl Rule {
    pub fn new<S: Into<String>>(pattern: impl Into<String>, distribution: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self {
            pattern: pattern.into(),
            image: ImageCondition::Any,
            prompt_contains: None,
            distribution: distribution.into_iter().map(|(w, p)| (w.into(), p)).collect(),
            attention: None,
        }
    }

    pub fn image(mut self, cond: ImageCondition) -> Self {
        self.image = cond;
        self
    }

    pub fn prompt_contains(mut self, needle: impl Into<String>) -> Self {
        self.prompt_contains = Some(needle.into());
        self
    }

    pub fn attention(mut self, image_mass: f64, text_mass: f64) -> Self {
        self.attention = Some((image_mass, text_mass));
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    #[serde(default)]
    pub vocab: Vec<String>,
    pub rules: Vec<Rule>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RuleFile {
    Bare(Vec<Rule>),
    Table(RuleTable),
}

impl RuleTable {
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let file: RuleFile = serde_json::from_str(text).map_err(|e| BackendError::InvalidRules(e.to_string()))?;
        Ok(match file {
            RuleFile::Bare(rules) => RuleTable { vocab: Vec::new(), rules },
            RuleFile::Table(t) => t,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

struct CompiledRule<T: Scalar> {
    anchored: bool,
    pattern: Vec<TokenId>,
    image: ImageCondition,
    prompt_contains: Option<String>,
    distribution: TokenDistribution<T>,
    attention: Option<AttentionBalance>,
}

/// Backend answering from an explicit (context pattern → distribution) table.
pub struct ScriptedBackend<T: Scalar> {
    vocab: WordVocab,
    rules: Vec<CompiledRule<T>>,
    fallback: TokenDistribution<T>,
    max_context: usize,
}

/// Pattern words taken verbatim instead of being pre-tokenized: subword
/// pieces (`sleep@@`) and the special surfaces.
fn is_literal_piece(word: &str) -> bool {
    word.ends_with("@@") || word == super::EOS_SURFACE || word == super::UNK_SURFACE
}

impl<T: Scalar> ScriptedBackend<T> {
    pub const DEFAULT_MAX_CONTEXT: usize = 4096;

    pub fn new(table: RuleTable) -> Result<Self, BackendError> {
        let mut vocab = WordVocab::new(&table.vocab);
        for rule in &table.rules {
            let texts = std::iter::once(rule.pattern.trim_start_matches('^')).chain(rule.prompt_contains.as_deref());
            for word in texts.flat_map(str::split_whitespace) {
                if is_literal_piece(word) {
                    vocab.insert(word);
                } else {
                    for piece in WordVocab::pretokenize(word) {
                        vocab.insert(piece);
                    }
                }
            }
            for word in rule.distribution.keys() {
                vocab.insert(word);
            }
        }
        let size = vocab.len();
        let mut rules = Vec::with_capacity(table.rules.len());
        for rule in table.rules {
            let anchored = rule.pattern.starts_with('^');
            let pattern = rule
                .pattern
                .trim_start_matches('^')
                .split_whitespace()
                .flat_map(|w| match vocab.id(w) {
                    Some(id) if is_literal_piece(w) => vec![id],
                    _ => vocab.tokenize(w),
                })
                .collect();
            let entries = rule
                .distribution
                .iter()
                .map(|(w, &p)| (vocab.id(w).expect("inserted above"), T::of(p)));
            let distribution = TokenDistribution::new(entries, size)
                .map_err(|e| BackendError::InvalidRules(format!("pattern {:?}: {e}", rule.pattern)))?;
            let attention = rule.attention.map(|(image_mass, text_mass)| AttentionBalance { image_mass, text_mass });
            if let Some(a) = attention {
                if !a.is_valid() {
                    return Err(BackendError::InvalidRules(format!("pattern {:?}: attention must sum to 1", rule.pattern)));
                }
            }
            rules.push(CompiledRule {
                anchored,
                pattern,
                image: rule.image,
                prompt_contains: rule.prompt_contains,
                distribution,
                attention,
            });
        }
        let fallback = TokenDistribution::point(WordVocab::EOS, size)?;
        Ok(Self { vocab, rules, fallback, max_context: Self::DEFAULT_MAX_CONTEXT })
    }

    pub fn from_rules(rules: Vec<Rule>) -> Result<Self, BackendError> {
        Self::new(RuleTable { vocab: Vec::new(), rules })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        Self::new(RuleTable::load(path)?)
    }

    pub fn with_max_context(mut self, max_context: usize) -> Self {
        self.max_context = max_context;
        self
    }

    pub fn vocab(&self) -> &WordVocab {
        &self.vocab
    }

    pub fn token(&self, word: &str) -> Option<TokenId> {
        self.vocab.id(word)
    }

    fn lookup(&self, ctx: &GenerationContext) -> (&TokenDistribution<T>, Option<AttentionBalance>) {
        let mut prompt_text: Option<String> = None;
        let mut best: Option<(&CompiledRule<T>, (bool, usize))> = None;
        for rule in &self.rules {
            let image_ok = match rule.image {
                ImageCondition::Any => true,
                ImageCondition::Present => ctx.image.is_some(),
                ImageCondition::Absent => ctx.image.is_none(),
            };
            if !image_ok {
                continue;
            }
            let matched = if rule.anchored {
                ctx.history == rule.pattern
            } else {
                ctx.history.ends_with(&rule.pattern)
            };
            if !matched {
                continue;
            }
            if let Some(needle) = &rule.prompt_contains {
                let text = prompt_text.get_or_insert_with(|| self.vocab.detokenize(&ctx.prompt));
                if !text.contains(needle.as_str()) {
                    continue;
                }
            }
            let key = (rule.anchored, rule.pattern.len());
            if best.as_ref().is_none_or(|(_, k)| key > *k) {
                best = Some((rule, key));
            }
        }
        match best {
            Some((rule, _)) => (&rule.distribution, rule.attention),
            None => (&self.fallback, None),
        }
    }
}

impl<T: Scalar> Backend<T> for ScriptedBackend<T> {
    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            supports_attention: self.rules.iter().any(|r| r.attention.is_some()),
            supports_image: true,
            vocab_size: self.vocab.len(),
            max_context: self.max_context,
            eos_token_id: Some(WordVocab::EOS),
        }
    }

    fn next_distribution(&self, ctx: &GenerationContext, top_k: usize) -> Result<StepResult<T>, BackendError> {
        check_context(ctx, &self.capabilities())?;
        let (dist, attention) = self.lookup(ctx);
        Ok(StepResult { distribution: dist.top_k(top_k), attention, calls_consumed: 1 })
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        Ok(self.vocab.tokenize(text))
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        Ok(self.vocab.detokenize(tokens))
    }

    fn ends_word(&self, token: TokenId) -> Option<bool> {
        Some(self.vocab.ends_word(token))
    }
}

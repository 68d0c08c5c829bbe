//! A toy captioner whose language prior grows with context length.
//!
//! Captions are built from five fixed sentence templates. Function-word slots
//! are identical with and without the image. In noun slots the image splits the
//! noun mass between nouns that are in the image and nouns that are not; the
//! off-image share is `min(max_off_mass, slope * L)` where `L` is the number of
//! generated tokens in the context. Without an image every noun is weighted by
//! the text prior alone. Shortening the conditioning text therefore lowers the
//! off-image mass, which is exactly the effect summary-guided decoding relies
//! on.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_context, fnv1a, AttentionBalance, Backend, BackendCapabilities, BackendError, GenerationContext, StepResult, WordVocab};
use crate::dist::{TokenDistribution, TokenId};
use crate::scalar::Scalar;

pub const NOUNS: &[&str] = &[
    "dog", "cat", "car", "bus", "truck", "bicycle", "motorcycle", "train", "boat", "bird", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag", "tie", "suitcase", "frisbee", "kite",
    "bottle", "cup", "bowl", "banana", "apple", "sandwich", "pizza", "cake", "chair", "couch", "bed", "laptop",
    "keyboard", "clock", "vase", "book",
];

pub const ADJECTIVES: &[&str] = &[
    "red", "blue", "green", "yellow", "white", "black", "brown", "small", "large", "old", "young", "wooden",
];

const FILLERS: &[&str] = &["the", "a", "and", "of"];

#[derive(Clone, Copy)]
enum Slot {
    Word(&'static str),
    Adj,
    Noun,
}

use Slot::{Adj, Noun, Word};

const TEMPLATES: &[&[Slot]] = &[
    &[Word("there"), Word("is"), Word("a"), Adj, Noun, Word(".")],
    &[Word("the"), Noun, Word("is"), Word("near"), Word("the"), Noun, Word(".")],
    &[Word("a"), Noun, Word("and"), Word("a"), Noun, Word("are"), Word("on"), Word("the"), Noun, Word(".")],
    &[Word("i"), Word("can"), Word("see"), Word("a"), Adj, Noun, Word(".")],
    &[Word("this"), Adj, Noun, Word("is"), Word("next"), Word("to"), Word("a"), Noun, Word(".")],
];

const EOS_AT_SENTENCE_START: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Growth of the off-image noun mass per generated token.
    pub slope: f64,
    /// Cap on the off-image noun mass.
    pub max_off_mass: f64,
    /// Weight multiplier for nouns already present in the context.
    pub novelty_penalty: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { slope: 0.005, max_off_mass: 0.9, novelty_penalty: 0.1, seed: 0 }
    }
}

pub struct SyntheticHallucinationBackend<T: Scalar> {
    config: SyntheticConfig,
    vocab: WordVocab,
    nouns: Vec<TokenId>,
    adjectives: Vec<TokenId>,
    period: TokenId,
    images: BTreeMap<String, BTreeSet<TokenId>>,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar> SyntheticHallucinationBackend<T> {
    /// `images` maps image ids to the nouns visible in them.
    pub fn new(config: SyntheticConfig, images: &BTreeMap<String, BTreeSet<String>>) -> Result<Self, BackendError> {
        let mut words: Vec<&str> = Vec::new();
        for t in TEMPLATES {
            for s in t.iter() {
                if let Word(w) = s {
                    words.push(w);
                }
            }
        }
        words.extend_from_slice(FILLERS);
        words.extend_from_slice(ADJECTIVES);
        words.extend_from_slice(NOUNS);
        let vocab = WordVocab::new(words);
        let nouns: Vec<TokenId> = NOUNS.iter().map(|w| vocab.id(w).unwrap()).collect();
        let adjectives = ADJECTIVES.iter().map(|w| vocab.id(w).unwrap()).collect();
        let mut by_image = BTreeMap::new();
        for (image, objects) in images {
            let mut ids = BTreeSet::new();
            for o in objects {
                match vocab.id(o) {
                    Some(id) if nouns.contains(&id) => {
                        ids.insert(id);
                    }
                    _ => return Err(BackendError::InvalidRules(format!("image {image}: unknown object {o:?}"))),
                }
            }
            by_image.insert(image.clone(), ids);
        }
        let period = vocab.id(".").unwrap();
        Ok(Self { config, vocab, nouns, adjectives, period, images: by_image, _scalar: std::marker::PhantomData })
    }

    /// Random image annotations: `count` images named `img-0000`, ... each
    /// holding `objects_per_image` distinct nouns.
    pub fn random_images(count: usize, objects_per_image: usize, seed: u64) -> BTreeMap<String, BTreeSet<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let objs = NOUNS
                    .choose_multiple(&mut rng, objects_per_image.min(NOUNS.len()))
                    .map(|s| s.to_string())
                    .collect();
                (format!("img-{i:04}"), objs)
            })
            .collect()
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn vocab(&self) -> &WordVocab {
        &self.vocab
    }

    pub fn nouns(&self) -> impl Iterator<Item = &'static str> {
        NOUNS.iter().copied()
    }

    pub fn objects_for(&self, image: &str) -> Option<BTreeSet<String>> {
        self.images
            .get(image)
            .map(|ids| ids.iter().map(|&id| self.vocab.surface(id).unwrap().to_string()).collect())
    }

    /// Off-image noun mass for a context of `history_len` generated tokens.
    pub fn off_image_mass(&self, history_len: usize) -> f64 {
        (self.config.slope * history_len as f64).min(self.config.max_off_mass)
    }

    fn unit_weight(&self, ctx: &GenerationContext, token: TokenId) -> f64 {
        let last = ctx.history.last().copied().unwrap_or(u32::MAX);
        let h = fnv1a(&[
            &self.config.seed.to_le_bytes(),
            &(ctx.history.len() as u64).to_le_bytes(),
            &last.to_le_bytes(),
            &token.to_le_bytes(),
        ]);
        0.5 + (h % 1_000_000) as f64 / 1_000_000.0
    }

    fn current_slot(&self, history: &[TokenId]) -> Option<Option<Slot>> {
        let start = history.iter().rposition(|&t| t == self.period).map_or(0, |i| i + 1);
        let sentence = &history[start..];
        let Some(&first) = sentence.first() else {
            return Some(None);
        };
        let first = self.vocab.surface(first)?;
        let template = TEMPLATES.iter().find(|t| matches!(t[0], Word(w) if w == first))?;
        template.get(sentence.len()).map(|s| Some(*s))
    }

    fn noun_weights(&self, ctx: &GenerationContext, on_image: Option<&BTreeSet<TokenId>>) -> Vec<(TokenId, f64)> {
        let weight = |t: TokenId| {
            let w = self.unit_weight(ctx, t);
            if ctx.history.contains(&t) {
                w * self.config.novelty_penalty
            } else {
                w
            }
        };
        let Some(on_image) = on_image else {
            let total: f64 = self.nouns.iter().map(|&t| weight(t)).sum();
            return self.nouns.iter().map(|&t| (t, weight(t) / total)).collect();
        };
        let (on, off): (Vec<TokenId>, Vec<TokenId>) = self.nouns.iter().partition(|t| on_image.contains(t));
        let off_mass = if on.is_empty() { 1.0 } else { self.off_image_mass(ctx.history.len()) };
        let mut out = Vec::with_capacity(self.nouns.len());
        for (group, mass) in [(&on, 1.0 - off_mass), (&off, off_mass)] {
            let total: f64 = group.iter().map(|&t| weight(t)).sum();
            if mass > 0.0 && total > 0.0 {
                out.extend(group.iter().map(|&t| (t, mass * weight(t) / total)));
            }
        }
        out
    }

    fn distribution(&self, ctx: &GenerationContext) -> Vec<(TokenId, f64)> {
        match self.current_slot(&ctx.history) {
            Some(None) => {
                let mut w: Vec<(TokenId, f64)> = TEMPLATES
                    .iter()
                    .map(|t| match t[0] {
                        Word(word) => {
                            let id = self.vocab.id(word).unwrap();
                            (id, self.unit_weight(ctx, id))
                        }
                        _ => unreachable!("templates start with a word"),
                    })
                    .collect();
                let total: f64 = w.iter().map(|x| x.1).sum();
                for x in &mut w {
                    x.1 *= (1.0 - EOS_AT_SENTENCE_START) / total;
                }
                w.push((WordVocab::EOS, EOS_AT_SENTENCE_START));
                w
            }
            Some(Some(Word(word))) => {
                let id = self.vocab.id(word).unwrap();
                let mut w = vec![(id, 0.94)];
                w.extend(
                    FILLERS
                        .iter()
                        .filter(|f| **f != word)
                        .take(3)
                        .map(|f| (self.vocab.id(f).unwrap(), 0.02)),
                );
                w
            }
            Some(Some(Adj)) => {
                let total: f64 = self.adjectives.iter().map(|&t| self.unit_weight(ctx, t)).sum();
                self.adjectives.iter().map(|&t| (t, self.unit_weight(ctx, t) / total)).collect()
            }
            Some(Some(Noun)) => {
                let image = ctx.image.as_ref().map(|h| (h.is_distorted(), self.images.get(h.base())));
                let empty = BTreeSet::new();
                match image {
                    None => self.noun_weights(ctx, None),
                    Some((false, objs)) => self.noun_weights(ctx, Some(objs.unwrap_or(&empty))),
                    Some((true, objs)) => {
                        let seen = self.noun_weights(ctx, Some(objs.unwrap_or(&empty)));
                        let prior: BTreeMap<TokenId, f64> = self.noun_weights(ctx, None).into_iter().collect();
                        let mut mixed: BTreeMap<TokenId, f64> = prior.iter().map(|(&t, &p)| (t, 0.5 * p)).collect();
                        for (t, p) in seen {
                            *mixed.entry(t).or_default() += 0.5 * p;
                        }
                        mixed.into_iter().collect()
                    }
                }
            }
            None => vec![(self.period, 0.9), (WordVocab::EOS, 0.1)],
        }
    }
}

impl<T: Scalar> Backend<T> for SyntheticHallucinationBackend<T> {
    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            supports_attention: true,
            supports_image: true,
            vocab_size: self.vocab.len(),
            max_context: 8192,
            eos_token_id: Some(WordVocab::EOS),
        }
    }

    fn next_distribution(&self, ctx: &GenerationContext, top_k: usize) -> Result<StepResult<T>, BackendError> {
        check_context(ctx, &self.capabilities())?;
        let entries = self.distribution(ctx).into_iter().map(|(t, p)| (t, T::of(p)));
        let dist = TokenDistribution::new(entries, self.vocab.len())?;
        let attention = ctx.image.as_ref().map(|_| {
            let image_mass = 0.6 / (1.0 + ctx.history.len() as f64 / 64.0);
            AttentionBalance { image_mass, text_mass: 1.0 - image_mass }
        });
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

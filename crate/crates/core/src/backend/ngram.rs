use std::collections::{BTreeMap, HashMap};

use super::{check_context, Backend, BackendCapabilities, BackendError, GenerationContext, StepResult, WordVocab};
use crate::dist::{TokenDistribution, TokenId};
use crate::scalar::Scalar;

/// Count-based n-gram model over a toy corpus.
///
/// The next-token distribution comes from the longest history suffix (up to
/// `order - 1` tokens) seen in training, backing off to the unigram counts.
/// Each corpus line is one caption terminated by `<eos>`. An image can boost
/// the weight of words it "contains", which gives the model an image/text-only
/// difference to measure.
pub struct NgramBackend<T: Scalar> {
    vocab: WordVocab,
    order: usize,
    counts: HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>>,
    image_boosts: HashMap<String, (Vec<TokenId>, f64)>,
    max_context: usize,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar> NgramBackend<T> {
    pub fn train(corpus: &str, order: usize) -> Self {
        let order = order.max(1);
        let mut vocab = WordVocab::new(std::iter::empty::<&str>());
        let mut counts: HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>> = HashMap::new();
        for line in corpus.lines().filter(|l| !l.trim().is_empty()) {
            let mut tokens: Vec<TokenId> = WordVocab::pretokenize(line).into_iter().map(|w| vocab.insert(w)).collect();
            tokens.push(WordVocab::EOS);
            for i in 0..tokens.len() {
                for n in 0..order {
                    if n > i {
                        break;
                    }
                    let ctx = tokens[i - n..i].to_vec();
                    *counts.entry(ctx).or_default().entry(tokens[i]).or_default() += 1;
                }
            }
        }
        Self {
            vocab,
            order,
            counts,
            image_boosts: HashMap::new(),
            max_context: 4096,
            _scalar: std::marker::PhantomData,
        }
    }

    /// Multiplies the weight of `words` by `factor` whenever `image` conditions
    /// the query.
    pub fn with_image_boost(mut self, image: &str, words: &[&str], factor: f64) -> Self {
        let ids = words.iter().filter_map(|w| self.vocab.id(w)).collect();
        self.image_boosts.insert(image.to_string(), (ids, factor));
        self
    }

    pub fn vocab(&self) -> &WordVocab {
        &self.vocab
    }

    fn table(&self, history: &[TokenId]) -> &BTreeMap<TokenId, u64> {
        let longest = history.len().min(self.order - 1);
        (0..=longest)
            .rev()
            .find_map(|n| self.counts.get(&history[history.len() - n..]))
            .expect("unigram table exists for any non-empty corpus")
    }
}

impl<T: Scalar> Backend<T> for NgramBackend<T> {
    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            supports_attention: false,
            supports_image: true,
            vocab_size: self.vocab.len(),
            max_context: self.max_context,
            eos_token_id: Some(WordVocab::EOS),
        }
    }

    fn next_distribution(&self, ctx: &GenerationContext, top_k: usize) -> Result<StepResult<T>, BackendError> {
        check_context(ctx, &self.capabilities())?;
        if self.counts.is_empty() {
            return Err(BackendError::BackendUnavailable("n-gram model trained on an empty corpus".into()));
        }
        let boost = ctx.image.as_ref().and_then(|img| self.image_boosts.get(img.base()));
        let weights = self.table(&ctx.history).iter().map(|(&t, &c)| {
            let mut w = c as f64;
            if let Some((ids, factor)) = boost {
                if ids.contains(&t) {
                    w *= factor;
                }
            }
            (t, T::of(w))
        });
        let dist = TokenDistribution::from_weights(weights, self.vocab.len())?;
        Ok(StepResult { distribution: dist.top_k(top_k), attention: None, calls_consumed: 1 })
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

use crate::backend::{Backend, BackendError, GenerationContext};
use crate::dist::{argmax_token, TokenId};
use crate::scalar::Scalar;

use super::{split_words, PosTag, PosTagger};

/// Upper bound on tokens generated to complete the lookahead word.
pub const MAX_LOOKAHEAD_TOKENS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadTag {
    pub tag: PosTag,
    /// The whole word containing the candidate.
    pub word: String,
    /// Tokens generated past the candidate (discarded by the caller).
    pub continuation: Vec<TokenId>,
    pub backend_calls: usize,
}

/// Tags `candidate` in context by generating one more word after it.
///
/// The candidate is appended to `ctx`, then tokens are generated greedily
/// until the candidate's word and one further word are complete, EOS appears,
/// or `max_tokens` calls have been spent. The words of the current sentence
/// (`ctx.history[sentence_start..]`) plus candidate and continuation are
/// tagged together and the tag of the word holding the candidate is returned.
pub fn lookahead_pos<T, B>(
    backend: &B,
    tagger: &dyn PosTagger,
    ctx: &GenerationContext,
    sentence_start: usize,
    candidate: TokenId,
    top_k: usize,
    max_tokens: usize,
) -> Result<LookaheadTag, BackendError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    let eos = backend.eos_token();
    let mut ext = ctx.clone();
    ext.push(candidate);
    let mut continuation = Vec::new();
    let mut calls = 0;

    // Number of continuation tokens that still belong to the candidate's word.
    let mut candidate_pieces = 0;
    let mut candidate_done = backend.ends_word(candidate);
    let sentence_words = |tokens: &[TokenId]| -> Result<usize, BackendError> {
        Ok(split_words(&backend.detokenize(tokens)?).len())
    };
    let candidate_word_count = if candidate_done.is_none() {
        Some(sentence_words(&ext.history[sentence_start..])?)
    } else {
        None
    };

    while calls < max_tokens.max(1) {
        let step = backend.next_distribution(&ext, top_k)?;
        calls += step.calls_consumed;
        let token = argmax_token(&step.distribution)?;
        if Some(token) == eos {
            break;
        }
        ext.push(token);
        continuation.push(token);
        match candidate_done {
            Some(false) => {
                candidate_pieces += 1;
                if backend.ends_word(token) == Some(true) {
                    candidate_done = Some(true);
                }
            }
            Some(true) => {
                if backend.ends_word(token) != Some(false) {
                    break;
                }
            }
            None => {
                // Word ends are unknown: stop once a word beyond the lookahead
                // word has started, so the lookahead word is complete.
                let base = candidate_word_count.unwrap_or(0);
                if sentence_words(&ext.history[sentence_start..])? >= base + 2 {
                    break;
                }
            }
        }
    }

    let history = &ext.history[sentence_start..];
    let words_text = backend.detokenize(history)?;
    let words = split_words(&words_text);
    let prefix_len = history.len() - continuation.len() + candidate_pieces;
    let index = split_words(&backend.detokenize(&history[..prefix_len])?).len().checked_sub(1);
    let Some(index) = index.filter(|&i| i < words.len()) else {
        return Ok(LookaheadTag { tag: PosTag::X, word: String::new(), continuation, backend_calls: calls });
    };
    let tags = tagger.tag(&words);
    Ok(LookaheadTag { tag: tags[index], word: words[index].to_string(), continuation, backend_calls: calls })
}

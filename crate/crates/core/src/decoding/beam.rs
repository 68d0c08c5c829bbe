use std::cmp::Ordering;

use crate::backend::{Backend, GenerationContext};
use crate::dist::TokenId;
use crate::scalar::Scalar;

use super::{
    apply_repetition_penalty, finish, surface, CallCounts, DecodeConfig, DecodeError, DecodeOutput, DecodeTrace,
    NoObserver, ObservedStep, Source, StepObserver,
};

/// Length-normalized beam search over summed log-probabilities.
///
/// Each step expands every live beam by its `2 * num_beams` best tokens and
/// keeps the `num_beams` best non-EOS candidates. An EOS candidate ranked
/// within the first `num_beams` finishes its hypothesis. Search stops once
/// `num_beams` hypotheses have finished, no beam is live, or the token budget
/// is spent. The result is the hypothesis with the highest
/// `sum_logprob / length`; with one beam this is exactly greedy decoding.
pub fn decode_beam<T, B>(backend: &B, ctx: &GenerationContext, cfg: &DecodeConfig) -> Result<DecodeOutput, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    cfg.validate()?;
    run(backend, ctx, cfg, &mut NoObserver)
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    logprob: f64,
    finished: bool,
}

impl Hypothesis {
    fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.logprob / self.tokens.len() as f64
        }
    }
}

struct Candidate {
    logprob: f64,
    beam: usize,
    token: TokenId,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.logprob
        .partial_cmp(&a.logprob)
        .unwrap_or(Ordering::Equal)
        .then(a.beam.cmp(&b.beam))
        .then(a.token.cmp(&b.token))
}

pub(super) fn run<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    cfg: &DecodeConfig,
    observer: &mut dyn StepObserver<T>,
) -> Result<DecodeOutput, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    let eos = backend.eos_token();
    let width = cfg.num_beams;
    let mut live = vec![Hypothesis { tokens: Vec::new(), logprob: 0.0, finished: false }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut step_calls: Vec<usize> = Vec::new();

    for _ in 0..cfg.max_new_tokens {
        let mut calls = 0;
        let mut candidates = Vec::new();
        for (beam, hyp) in live.iter().enumerate() {
            let hctx = extend(ctx, &hyp.tokens);
            let step = backend.next_distribution(&hctx, cfg.top_k)?;
            calls += step.calls_consumed;
            let dist = apply_repetition_penalty(&step.distribution, &hctx.history, cfg.repetition_penalty);
            for (token, p) in dist.ranked().into_iter().take(2 * width) {
                candidates.push(Candidate { logprob: hyp.logprob + p.as_f64().ln(), beam, token });
            }
        }
        step_calls.push(calls);
        candidates.sort_by(rank);
        let mut next = Vec::with_capacity(width);
        for (i, c) in candidates.iter().enumerate() {
            let mut tokens = live[c.beam].tokens.clone();
            tokens.push(c.token);
            if Some(c.token) == eos {
                if i < width {
                    finished.push(Hypothesis { tokens, logprob: c.logprob, finished: true });
                }
            } else {
                next.push(Hypothesis { tokens, logprob: c.logprob, finished: false });
            }
            if next.len() == width {
                break;
            }
        }
        live = next;
        if finished.len() >= width || live.is_empty() {
            break;
        }
    }

    let pool: Vec<&Hypothesis> = if finished.len() >= width {
        finished.iter().collect()
    } else {
        finished.iter().chain(live.iter()).collect()
    };
    let mut best: Option<&Hypothesis> = None;
    for h in pool {
        if best.is_none_or(|b| h.score() > b.score()) {
            best = Some(h);
        }
    }

    let mut trace = DecodeTrace::new(cfg.label());
    let Some(best) = best else {
        return finish(backend, Vec::new(), trace);
    };
    let mut tokens = best.tokens.clone();
    if best.finished {
        tokens.pop();
    }
    for (i, &token) in best.tokens.iter().enumerate() {
        let calls = CallCounts::generation(step_calls.get(i).copied().unwrap_or(0));
        let is_eos = best.finished && i + 1 == best.tokens.len();
        let word = if is_eos { String::new() } else { surface(backend, token)? };
        trace.push(token, word, None, Source::NotApplicable, calls, is_eos);
    }
    let spent: usize = step_calls.iter().skip(best.tokens.len()).sum();
    if spent > 0 {
        trace.charge_last(CallCounts::generation(spent));
    }

    // Teacher-forced replay of the winning sequence for observers.
    if observer.enabled() {
        for (position, &token) in tokens.iter().enumerate() {
            let hctx = extend(ctx, &tokens[..position]);
            let step = backend.next_distribution(&hctx, cfg.top_k)?;
            let dist = apply_repetition_penalty(&step.distribution, &hctx.history, cfg.repetition_penalty);
            observer.observe(&ObservedStep {
                position,
                context: &hctx,
                effective: &dist,
                contrast: None,
                token,
                source: Source::NotApplicable,
            })?;
        }
    }
    finish(backend, tokens, trace)
}

fn extend(ctx: &GenerationContext, tokens: &[TokenId]) -> GenerationContext {
    let mut history = ctx.history.clone();
    history.extend_from_slice(tokens);
    ctx.with_history(history)
}

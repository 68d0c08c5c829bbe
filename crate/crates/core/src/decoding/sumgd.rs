//! Summary-guided decoding.
//!
//! Two contexts share the image and prompt. FULL holds the entire generated
//! text. SUMMARY holds a summary of the completed sentences followed by the
//! sentence in progress. Each step a candidate is proposed from one context
//! and POS-tagged with one word of lookahead; image-related candidates are
//! taken from SUMMARY, everything else from FULL. After every completed
//! sentence the summary is recomputed.

use crate::backend::{Backend, GenerationContext};
use crate::dist::{argmax_token, TokenDistribution, TokenId};
use crate::linguistics::{lookahead_pos, PosTag};
use crate::scalar::Scalar;
use crate::summarizer::{SummarizerError, SummaryState};

use super::{
    apply_repetition_penalty, finish, surface, CallCounts, DecodeConfig, DecodeError, DecodeOutput, DecodeTrace,
    NoObserver, ObservedStep, PosScope, Routing, Source, StepObserver, SumgdParts, SumgdSpec, SummaryScope,
};

pub fn decode_sumgd<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    cfg: &DecodeConfig,
    parts: SumgdParts<'_>,
) -> Result<DecodeOutput, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    cfg.validate()?;
    run(backend, ctx, cfg, parts, &mut NoObserver)
}

struct Proposal<T: Scalar> {
    token: TokenId,
    dist: TokenDistribution<T>,
}

struct Contexts<'a> {
    full: &'a GenerationContext,
    summary: &'a GenerationContext,
    /// Index in `summary.history` where the current sentence starts.
    summary_sentence_start: usize,
    full_sentence_start: usize,
}

impl Contexts<'_> {
    fn identical(&self) -> bool {
        self.full.history == self.summary.history
    }
}

pub(super) fn run<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    cfg: &DecodeConfig,
    parts: SumgdParts<'_>,
    observer: &mut dyn StepObserver<T>,
) -> Result<DecodeOutput, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    let spec = cfg.sumgd.as_ref().expect("validated");
    let eos = backend.eos_token();
    let mut full = ctx.clone();
    let mut sentence_start = full.history.len();
    // Token prefix of the SUMMARY context; `None` until the first sentence
    // completes, when both contexts coincide.
    let mut summary_prefix: Option<Vec<TokenId>> = None;
    let mut state = SummaryState::default();
    let mut trace = DecodeTrace::new(cfg.label());
    let mut tokens = Vec::new();

    for position in 0..cfg.max_new_tokens {
        let summary = match &summary_prefix {
            None => full.clone(),
            Some(prefix) => {
                let mut history = prefix.clone();
                history.extend_from_slice(&full.history[sentence_start..]);
                full.with_history(history)
            }
        };
        let contexts = Contexts {
            full: &full,
            summary: &summary,
            summary_sentence_start: summary.history.len() - (full.history.len() - sentence_start),
            full_sentence_start: sentence_start,
        };
        let mut calls = CallCounts::default();
        let (chosen, source, tag) = route(backend, cfg, spec, parts, &contexts, eos, &mut calls)?;
        let token = chosen.token;

        if Some(token) == eos {
            trace.push(token, String::new(), tag, source, calls, true);
            break;
        }
        observer.observe(&ObservedStep {
            position,
            context: &full,
            effective: &chosen.dist,
            contrast: None,
            token,
            source,
        })?;
        trace.push(token, surface(backend, token)?, tag, source, calls, false);
        full.push(token);
        tokens.push(token);

        let sentence_text = backend.detokenize(&full.history[sentence_start..])?;
        if !parts.linguistics.segmenter.ends_sentence(&sentence_text) {
            continue;
        }
        let source_text = backend.detokenize(&full.history)?;
        let input = match spec.summary_scope {
            SummaryScope::Full => source_text.as_str(),
            SummaryScope::Incremental => sentence_text.as_str(),
        };
        let (summary_text, spent) = match parts.summarizer.summarize(input) {
            Ok(s) => {
                let text = match spec.summary_scope {
                    SummaryScope::Incremental if !state.summary_text.is_empty() => format!("{} {}", state.summary_text, s.text),
                    _ => s.text,
                };
                (text, s.backend_calls)
            }
            Err(SummarizerError::EmptySummary { backend_calls }) => {
                log::warn!("empty summary at position {position}; keeping the previous one");
                let previous = if state.revision > 0 { state.summary_text.clone() } else { source_text.clone() };
                (previous, backend_calls)
            }
            Err(e) => return Err(e.into()),
        };
        trace.charge_last(CallCounts { summarization: spent, ..CallCounts::default() });
        state = state.next(&source_text, summary_text);
        trace.summaries.push(state.clone());
        summary_prefix = Some(if state.summary_text == source_text {
            full.history.clone()
        } else if parts.linguistics.segmenter.ends_sentence(&state.summary_text) {
            backend.tokenize(&state.summary_text)?
        } else {
            // Close the summary so the next sentence starts cleanly.
            backend.tokenize(&format!("{} .", state.summary_text))?
        });
        sentence_start = full.history.len();
    }
    finish(backend, tokens, trace)
}

fn propose<T, B>(
    backend: &B,
    cfg: &DecodeConfig,
    ctx: &GenerationContext,
    penalty_history: &[TokenId],
    calls: &mut CallCounts,
) -> Result<Proposal<T>, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    let step = backend.next_distribution(ctx, cfg.top_k)?;
    calls.generation += step.calls_consumed;
    let dist = apply_repetition_penalty(&step.distribution, penalty_history, cfg.repetition_penalty).into_owned();
    let token = argmax_token(&dist)?;
    Ok(Proposal { token, dist })
}

/// Tag of `candidate` in `ctx`, with lookahead. EOS is tagged X without
/// lookahead.
fn classify<T, B>(
    backend: &B,
    cfg: &DecodeConfig,
    spec: &SumgdSpec,
    parts: SumgdParts<'_>,
    ctx: &GenerationContext,
    sentence_start: usize,
    candidate: TokenId,
    eos: Option<TokenId>,
    calls: &mut CallCounts,
) -> Result<PosTag, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    if Some(candidate) == eos {
        return Ok(PosTag::X);
    }
    let tagged = lookahead_pos(
        backend,
        &*parts.linguistics.tagger,
        ctx,
        sentence_start,
        candidate,
        cfg.top_k,
        spec.max_lookahead_tokens,
    )?;
    calls.lookahead += tagged.backend_calls;
    Ok(tagged.tag)
}

fn route<T, B>(
    backend: &B,
    cfg: &DecodeConfig,
    spec: &SumgdSpec,
    parts: SumgdParts<'_>,
    cx: &Contexts<'_>,
    eos: Option<TokenId>,
    calls: &mut CallCounts,
) -> Result<(Proposal<T>, Source, Option<PosTag>), DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    let penalty_history = &cx.full.history;
    if spec.pos_scope == PosScope::All {
        let s = propose(backend, cfg, cx.summary, penalty_history, calls)?;
        return Ok((s, Source::Summary, None));
    }
    match spec.routing {
        Routing::SummaryFirst => {
            let s = propose(backend, cfg, cx.summary, penalty_history, calls)?;
            let tag = classify(backend, cfg, spec, parts, cx.summary, cx.summary_sentence_start, s.token, eos, calls)?;
            if tag.is_image_related() {
                return Ok((s, Source::Summary, Some(tag)));
            }
            let f = if cx.identical() { s } else { propose(backend, cfg, cx.full, penalty_history, calls)? };
            Ok((f, Source::Full, Some(tag)))
        }
        Routing::FullFirst => {
            let f = propose(backend, cfg, cx.full, penalty_history, calls)?;
            let tag = classify(backend, cfg, spec, parts, cx.full, cx.full_sentence_start, f.token, eos, calls)?;
            if !tag.is_image_related() {
                return Ok((f, Source::Full, Some(tag)));
            }
            let s = if cx.identical() { f } else { propose(backend, cfg, cx.summary, penalty_history, calls)? };
            Ok((s, Source::Summary, Some(tag)))
        }
    }
}

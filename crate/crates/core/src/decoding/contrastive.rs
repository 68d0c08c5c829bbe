use crate::backend::{Backend, GenerationContext};
use crate::dist::{TokenDistribution, TokenId, PROBABILITY_FLOOR};
use crate::scalar::Scalar;

use super::{
    apply_repetition_penalty, finish, surface, CallCounts, ContrastMode, ContrastSpec, DecodeConfig, DecodeError,
    DecodeOutput, DecodeTrace, NoObserver, ObservedStep, Source, StepObserver, DEFAULT_CONTRAST_PREFIX,
};

/// Contrastive decoding against a weakened copy of the context.
///
/// Among tokens with `p >= cutoff * max p`, picks the maximum of
/// `(1 + a) ln p - a ln q`, with `p` the primary and `q` the contrast
/// distribution. Ties go to the lowest token id.
pub fn decode_contrastive<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    cfg.validate()?;
    run(backend, ctx, cfg, &mut NoObserver)
}

/// The context the primary one is contrasted with (same history).
pub fn contrast_context<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    spec: &ContrastSpec,
) -> Result<GenerationContext, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    match spec.contrast_mode {
        ContrastMode::DistortedImage => {
            let image = ctx.image.as_ref().ok_or(DecodeError::MissingContrastContext("distorted_image needs an image"))?;
            Ok(ctx.with_image(Some(image.distorted())))
        }
        ContrastMode::NoImage => {
            if ctx.image.is_none() {
                return Err(DecodeError::MissingContrastContext("no_image needs an image to remove"));
            }
            Ok(ctx.text_only())
        }
        ContrastMode::ModifiedInstruction => {
            let prefix = spec.contrast_prefix.as_deref().unwrap_or(DEFAULT_CONTRAST_PREFIX);
            let mut prompt = backend.tokenize(prefix)?;
            if prompt.is_empty() {
                return Err(DecodeError::MissingContrastContext("modified_instruction prefix tokenizes to nothing"));
            }
            prompt.extend_from_slice(&ctx.prompt);
            Ok(GenerationContext { image: ctx.image.clone(), prompt, history: ctx.history.clone() })
        }
    }
}

/// Contrastive score of every plausible token, in token-id order.
pub fn contrastive_scores<T: Scalar>(
    primary: &TokenDistribution<T>,
    contrast: &TokenDistribution<T>,
    alpha: f64,
    cutoff: f64,
) -> Vec<(TokenId, f64)> {
    let max_p = primary.iter().map(|(_, p)| p.as_f64()).fold(0.0, f64::max);
    let missing_q = {
        let unseen = contrast.vocab_size().saturating_sub(contrast.len());
        if contrast.residual().as_f64() > 0.0 && unseen > 0 {
            (contrast.residual().as_f64() / unseen as f64).max(PROBABILITY_FLOOR)
        } else {
            PROBABILITY_FLOOR
        }
    };
    primary
        .iter()
        .filter(|&(_, p)| p.as_f64() >= cutoff * max_p)
        .map(|(t, p)| {
            let lp = p.as_f64().ln();
            let q = contrast.prob(t).as_f64();
            let lq = if q > 0.0 { q.ln() } else { missing_q.ln() };
            (t, lp + alpha * (lp - lq))
        })
        .collect()
}

fn pick(scores: &[(TokenId, f64)]) -> Option<TokenId> {
    let mut best: Option<(TokenId, f64)> = None;
    for &(t, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((t, s));
        }
    }
    best.map(|(t, _)| t)
}

/// Softmax of the scores: the distribution contrastive decoding effectively
/// selects from.
fn effective<T: Scalar>(scores: &[(TokenId, f64)], vocab_size: usize) -> Result<TokenDistribution<T>, DecodeError> {
    let max = scores.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let weights = scores.iter().map(|&(t, s)| (t, T::of((s - max).exp())));
    Ok(TokenDistribution::from_weights(weights, vocab_size)?)
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
    let spec = cfg.contrast.as_ref().expect("validated");
    let eos = backend.eos_token();
    let mut ctx = ctx.clone();
    let mut contrast_ctx = contrast_context(backend, &ctx, spec)?;
    let mut trace = DecodeTrace::new(cfg.label());
    let mut tokens = Vec::new();
    for position in 0..cfg.max_new_tokens {
        let p_step = backend.next_distribution(&ctx, cfg.top_k)?;
        let q_step = backend.next_distribution(&contrast_ctx, cfg.top_k)?;
        let calls = CallCounts::generation(p_step.calls_consumed + q_step.calls_consumed);
        let p = apply_repetition_penalty(&p_step.distribution, &ctx.history, cfg.repetition_penalty);
        let q = apply_repetition_penalty(&q_step.distribution, &ctx.history, cfg.repetition_penalty);
        let alpha = spec.alpha_at(position, cfg.max_new_tokens);
        let scores = contrastive_scores(&p, &q, alpha, spec.plausibility_cutoff);
        let token = pick(&scores).ok_or(crate::dist::DistError::EmptyDistribution)?;
        if Some(token) == eos {
            trace.push(token, String::new(), None, Source::Contrastive, calls, true);
            break;
        }
        if observer.enabled() {
            let eff = effective::<T>(&scores, p.vocab_size())?;
            observer.observe(&ObservedStep {
                position,
                context: &ctx,
                effective: &eff,
                contrast: Some(&q),
                token,
                source: Source::Contrastive,
            })?;
        }
        trace.push(token, surface(backend, token)?, None, Source::Contrastive, calls, false);
        ctx.push(token);
        contrast_ctx.push(token);
        tokens.push(token);
    }
    finish(backend, tokens, trace)
}

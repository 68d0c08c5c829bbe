use crate::backend::{Backend, GenerationContext};
use crate::dist::argmax_token;
use crate::scalar::Scalar;

use super::{
    apply_repetition_penalty, finish, surface, CallCounts, DecodeConfig, DecodeError, DecodeOutput, DecodeTrace,
    NoObserver, ObservedStep, Source, StepObserver,
};

/// Appends the most probable token until EOS or `max_new_tokens`.
pub fn decode_greedy<T, B>(backend: &B, ctx: &GenerationContext, cfg: &DecodeConfig) -> Result<DecodeOutput, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    cfg.validate()?;
    run(backend, ctx, cfg, &mut NoObserver)
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
    let mut ctx = ctx.clone();
    let mut trace = DecodeTrace::new(cfg.label());
    let mut tokens = Vec::new();
    for position in 0..cfg.max_new_tokens {
        let step = backend.next_distribution(&ctx, cfg.top_k)?;
        let calls = CallCounts::generation(step.calls_consumed);
        let dist = apply_repetition_penalty(&step.distribution, &ctx.history, cfg.repetition_penalty);
        let token = argmax_token(&dist)?;
        if Some(token) == eos {
            trace.push(token, String::new(), None, Source::NotApplicable, calls, true);
            break;
        }
        observer.observe(&ObservedStep {
            position,
            context: &ctx,
            effective: &dist,
            contrast: None,
            token,
            source: Source::NotApplicable,
        })?;
        trace.push(token, surface(backend, token)?, None, Source::NotApplicable, calls, false);
        ctx.push(token);
        tokens.push(token);
    }
    finish(backend, tokens, trace)
}

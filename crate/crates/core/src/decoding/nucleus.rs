use rand::distributions::{Distribution as _, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::{Backend, GenerationContext};
use crate::dist::nucleus_filter;
use crate::scalar::Scalar;

use super::{
    apply_repetition_penalty, finish, surface, CallCounts, DecodeConfig, DecodeError, DecodeOutput, DecodeTrace,
    NoObserver, ObservedStep, Source, StepObserver,
};

/// Samples each token from the top-p nucleus with a ChaCha RNG seeded from
/// `cfg.seed`.
pub fn decode_nucleus<T, B>(backend: &B, ctx: &GenerationContext, cfg: &DecodeConfig) -> Result<DecodeOutput, DecodeError>
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
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eos = backend.eos_token();
    let mut ctx = ctx.clone();
    let mut trace = DecodeTrace::new(cfg.label());
    let mut tokens = Vec::new();
    for position in 0..cfg.max_new_tokens {
        let step = backend.next_distribution(&ctx, cfg.top_k)?;
        let calls = CallCounts::generation(step.calls_consumed);
        let dist = apply_repetition_penalty(&step.distribution, &ctx.history, cfg.repetition_penalty);
        let nucleus = nucleus_filter(&dist, cfg.top_p)?;
        // Ranked order keeps sampling independent of map iteration details;
        // residual mass (top_p == 1 on a truncated input) is never sampled.
        let ranked = nucleus.ranked();
        let weights = WeightedIndex::new(ranked.iter().map(|&(_, p)| p.as_f64()))
            .map_err(|_| crate::dist::DistError::EmptyDistribution)?;
        let token = ranked[weights.sample(&mut rng)].0;
        if Some(token) == eos {
            trace.push(token, String::new(), None, Source::NotApplicable, calls, true);
            break;
        }
        observer.observe(&ObservedStep {
            position,
            context: &ctx,
            effective: &nucleus,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Rule, ScriptedBackend};
    use crate::decoding::{decode_greedy, Strategy};

    fn backend() -> ScriptedBackend<f64> {
        ScriptedBackend::from_rules(vec![
            Rule::new("^", [("a", 0.5), ("the", 0.3), ("one", 0.2)]),
            Rule::new("a", [("cat", 0.4), ("dog", 0.35), ("bird", 0.25)]),
            Rule::new("the", [("cat", 0.5), ("dog", 0.5)]),
            Rule::new("one", [("dog", 1.0)]),
            Rule::new("cat", [(".", 1.0)]),
            Rule::new("dog", [(".", 0.5), ("runs", 0.5)]),
            Rule::new("bird", [(".", 1.0)]),
            Rule::new("runs", [(".", 1.0)]),
        ])
        .unwrap()
    }

    fn cfg(top_p: f64, seed: u64) -> DecodeConfig {
        let mut c = DecodeConfig::new(Strategy::Nucleus);
        c.top_p = top_p;
        c.seed = seed;
        c.max_new_tokens = 16;
        c
    }

    #[test]
    fn tiny_top_p_is_greedy() {
        let b = backend();
        let ctx = GenerationContext::new(None, b.vocab().tokenize("go"));
        let n = decode_nucleus(&b, &ctx, &cfg(1e-9, 7)).unwrap();
        let g = decode_greedy(&b, &ctx, &DecodeConfig::greedy().with_max_new_tokens(16)).unwrap();
        assert_eq!(n.text, g.text);
    }

    #[test]
    fn seed_reproducibility() {
        let b = backend();
        let ctx = GenerationContext::new(None, b.vocab().tokenize("go"));
        for seed in 0..10 {
            assert_eq!(decode_nucleus(&b, &ctx, &cfg(0.9, seed)).unwrap(), decode_nucleus(&b, &ctx, &cfg(0.9, seed)).unwrap());
        }
    }

    #[test]
    fn samples_stay_in_nucleus() {
        let b = backend();
        let ctx = GenerationContext::new(None, b.vocab().tokenize("go"));
        let bird = b.token("bird").unwrap();
        for seed in 0..50 {
            let out = decode_nucleus(&b, &ctx, &cfg(0.7, seed)).unwrap();
            assert!(!out.tokens.contains(&bird), "seed {seed}: {}", out.text);
        }
    }
}

//! Decoding strategies. Every decoder returns the generated text together
//! with a [`DecodeTrace`] recording each emitted token and the backend calls
//! spent on it.

mod beam;
mod config;
mod contrastive;
mod greedy;
mod nucleus;
mod sumgd;
mod trace;

use std::borrow::Cow;

use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationContext};
use crate::dist::{DistError, TokenDistribution, TokenId};
use crate::linguistics::Linguistics;
use crate::scalar::Scalar;
use crate::summarizer::{Summarizer, SummarizerError};

pub use beam::decode_beam;
pub use config::{
    AlphaSchedule, ConfigError, ContrastMode, ContrastSpec, DecodeConfig, PosScope, Routing, Strategy, SumgdSpec,
    SummarizerKind, SummaryScope, DEFAULT_CONTRAST_PREFIX, SWEEP_LENGTHS,
};
pub use contrastive::{contrast_context, contrastive_scores, decode_contrastive};
pub use greedy::decode_greedy;
pub use nucleus::decode_nucleus;
pub use sumgd::decode_sumgd;
pub use trace::{CallCounts, DecodeTrace, Source, StepRecord, TraceHeader, TraceLine};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error(transparent)]
    Summarizer(#[from] SummarizerError),
    #[error("cannot build contrast context: {0}")]
    MissingContrastContext(&'static str),
    #[error("summary-guided decoding needs a summarizer")]
    MissingSummarizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub text: String,
    /// Generated tokens, without the end-of-sequence token.
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace,
}

/// What an observer sees for every emitted (non-EOS) token.
pub struct ObservedStep<'a, T: Scalar> {
    pub position: usize,
    /// Image, prompt and the full generated history before this token.
    pub context: &'a GenerationContext,
    /// Distribution the token was selected from.
    pub effective: &'a TokenDistribution<T>,
    /// Contrast distribution, for contrastive decoding.
    pub contrast: Option<&'a TokenDistribution<T>>,
    pub token: TokenId,
    pub source: trace::Source,
}

/// Hook for analysis code that wants to look at every decoding step without
/// influencing it. Calls an observer makes are not counted in the trace.
pub trait StepObserver<T: Scalar> {
    fn observe(&mut self, step: &ObservedStep<'_, T>) -> Result<(), BackendError>;

    /// Decoders may skip observer-only work (such as beam replay) when false.
    fn enabled(&self) -> bool {
        true
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl<T: Scalar> StepObserver<T> for NoObserver {
    fn observe(&mut self, _step: &ObservedStep<'_, T>) -> Result<(), BackendError> {
        Ok(())
    }

    fn enabled(&self) -> bool {
        false
    }
}

/// Summarizer and linguistic tools needed by [`decode_sumgd`].
#[derive(Clone, Copy)]
pub struct SumgdParts<'a> {
    pub summarizer: &'a dyn Summarizer,
    pub linguistics: &'a Linguistics,
}

/// Divides the probability of every token already in `history` by `penalty`
/// and renormalizes. A penalty of exactly 1 leaves the distribution untouched.
pub fn apply_repetition_penalty<'a, T: Scalar>(
    dist: &'a TokenDistribution<T>,
    history: &[TokenId],
    penalty: f64,
) -> Cow<'a, TokenDistribution<T>> {
    if penalty == 1.0 || history.is_empty() {
        Cow::Borrowed(dist)
    } else {
        Cow::Owned(dist.reweight(history.iter().copied(), T::of(1.0 / penalty)))
    }
}

/// Runs the decoder selected by `cfg.strategy`.
pub fn decode<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    cfg: &DecodeConfig,
    parts: Option<SumgdParts<'_>>,
    observer: &mut dyn StepObserver<T>,
) -> Result<DecodeOutput, DecodeError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Greedy => greedy::run(backend, ctx, cfg, observer),
        Strategy::Nucleus => nucleus::run(backend, ctx, cfg, observer),
        Strategy::Beam => beam::run(backend, ctx, cfg, observer),
        Strategy::Contrastive => contrastive::run(backend, ctx, cfg, observer),
        Strategy::Sumgd => {
            let parts = parts.ok_or(DecodeError::MissingSummarizer)?;
            sumgd::run(backend, ctx, cfg, parts, observer)
        }
    }
}

fn surface<T: Scalar, B: Backend<T> + ?Sized>(backend: &B, token: TokenId) -> Result<String, BackendError> {
    backend.detokenize(&[token])
}

fn finish<T: Scalar, B: Backend<T> + ?Sized>(
    backend: &B,
    tokens: Vec<TokenId>,
    trace: DecodeTrace,
) -> Result<DecodeOutput, DecodeError> {
    let text = backend.detokenize(&tokens)?;
    Ok(DecodeOutput { text, tokens, trace })
}

//! Model backends: anything that can turn a generation context into a
//! next-token distribution.
//!
//! Three deterministic mocks live here alongside the HTTP client for the model
//! sidecar. Mocks are immutable after construction and are pure functions of
//! the [`GenerationContext`] they are queried with.

mod http;
mod ngram;
mod scripted;
mod synthetic;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, TokenDistribution, TokenId};
use crate::scalar::Scalar;

pub use http::{HttpBackend, SIDECAR_URL_ENV};
pub use ngram::NgramBackend;
pub use scripted::{ImageCondition, Rule, RuleTable, ScriptedBackend};
pub use synthetic::{SyntheticConfig, SyntheticHallucinationBackend};
pub use vocab::{WordVocab, EOS_SURFACE, UNK_SURFACE};

/// Default number of entries requested per query; the rest travels as residual.
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("context of {len} tokens exceeds backend limit {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend does not accept images")]
    ImageUnsupported,
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid rule table: {0}")]
    InvalidRules(String),
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Opaque reference to an image. Only the sidecar interprets it (file path,
/// `base64:` payload, dataset id, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageHandle(String);

const DISTORTED_SUFFIX: &str = "#distorted";

impl ImageHandle {
    pub fn new(handle: impl Into<String>) -> Self {
        Self(handle.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Handle of the noised copy of this image used by distorted-image
    /// contrast. The sidecar applies the distortion.
    pub fn distorted(&self) -> Self {
        if self.is_distorted() {
            self.clone()
        } else {
            Self(format!("{}{DISTORTED_SUFFIX}", self.0))
        }
    }

    pub fn is_distorted(&self) -> bool {
        self.0.ends_with(DISTORTED_SUFFIX)
    }

    /// The undistorted image this handle refers to.
    pub fn base(&self) -> &str {
        self.0.strip_suffix(DISTORTED_SUFFIX).unwrap_or(&self.0)
    }
}

impl fmt::Display for ImageHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Conditioning input of every backend query: optional image, prompt and the
/// tokens generated so far. A context without an image is the text-only
/// ("LLM") condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenerationContext {
    pub image: Option<ImageHandle>,
    pub prompt: Vec<TokenId>,
    pub history: Vec<TokenId>,
}

impl GenerationContext {
    pub fn new(image: Option<ImageHandle>, prompt: Vec<TokenId>) -> Self {
        Self { image, prompt, history: Vec::new() }
    }

    /// Same prompt and history, image removed.
    pub fn text_only(&self) -> Self {
        Self { image: None, prompt: self.prompt.clone(), history: self.history.clone() }
    }

    pub fn with_history(&self, history: Vec<TokenId>) -> Self {
        Self { image: self.image.clone(), prompt: self.prompt.clone(), history }
    }

    pub fn with_image(&self, image: Option<ImageHandle>) -> Self {
        Self { image, prompt: self.prompt.clone(), history: self.history.clone() }
    }

    pub fn push(&mut self, token: TokenId) {
        self.history.push(token);
    }

    /// Prompt plus history length.
    pub fn len(&self) -> usize {
        self.prompt.len() + self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub supports_attention: bool,
    pub supports_image: bool,
    pub vocab_size: usize,
    pub max_context: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_token_id: Option<TokenId>,
}

/// Share of attention the current position puts on image vs text tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionBalance {
    pub image_mass: f64,
    pub text_mass: f64,
}

impl AttentionBalance {
    pub fn is_valid(&self) -> bool {
        self.image_mass >= 0.0 && self.text_mass >= 0.0 && (self.image_mass + self.text_mass - 1.0).abs() <= 1e-4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T: Scalar> {
    pub distribution: TokenDistribution<T>,
    pub attention: Option<AttentionBalance>,
    pub calls_consumed: usize,
}

/// A model that produces next-token distributions and owns a tokenizer.
pub trait Backend<T: Scalar>: Send + Sync {
    fn capabilities(&self) -> BackendCapabilities;

    fn next_distribution(&self, ctx: &GenerationContext, top_k: usize) -> Result<StepResult<T>, BackendError>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError>;

    /// Whether `token` completes a word. `None` when the tokenizer cannot tell
    /// (the caller then waits for the next word to start).
    fn ends_word(&self, _token: TokenId) -> Option<bool> {
        None
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.capabilities().eos_token_id
    }
}

impl<T: Scalar, B: Backend<T> + ?Sized> Backend<T> for &B {
    fn capabilities(&self) -> BackendCapabilities {
        (**self).capabilities()
    }
    fn next_distribution(&self, ctx: &GenerationContext, top_k: usize) -> Result<StepResult<T>, BackendError> {
        (**self).next_distribution(ctx, top_k)
    }
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        (**self).detokenize(tokens)
    }
    fn ends_word(&self, token: TokenId) -> Option<bool> {
        (**self).ends_word(token)
    }
    fn eos_token(&self) -> Option<TokenId> {
        (**self).eos_token()
    }
}

impl<T: Scalar, B: Backend<T> + ?Sized> Backend<T> for Box<B> {
    fn capabilities(&self) -> BackendCapabilities {
        (**self).capabilities()
    }
    fn next_distribution(&self, ctx: &GenerationContext, top_k: usize) -> Result<StepResult<T>, BackendError> {
        (**self).next_distribution(ctx, top_k)
    }
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        (**self).detokenize(tokens)
    }
    fn ends_word(&self, token: TokenId) -> Option<bool> {
        (**self).ends_word(token)
    }
    fn eos_token(&self) -> Option<TokenId> {
        (**self).eos_token()
    }
}

/// Precondition shared by every backend: non-empty prompt, bounded length,
/// image only when supported.
pub(crate) fn check_context(ctx: &GenerationContext, caps: &BackendCapabilities) -> Result<(), BackendError> {
    if ctx.prompt.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    if ctx.len() > caps.max_context {
        return Err(BackendError::ContextOverflow { len: ctx.len(), max: caps.max_context });
    }
    if ctx.image.is_some() && !caps.supports_image {
        return Err(BackendError::ImageUnsupported);
    }
    Ok(())
}

/// Stable 64-bit FNV-1a hash, used by the mocks to derive deterministic
/// pseudo-random weights from context contents.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distorted_handles_round_trip() {
        let h = ImageHandle::new("coco/000123.jpg");
        let d = h.distorted();
        assert!(d.is_distorted());
        assert_eq!(d.base(), "coco/000123.jpg");
        assert_eq!(d.distorted(), d);
    }

    #[test]
    fn context_checks() {
        let caps = BackendCapabilities {
            supports_attention: false,
            supports_image: false,
            vocab_size: 10,
            max_context: 3,
            eos_token_id: None,
        };
        let ctx = GenerationContext::new(None, vec![]);
        assert!(matches!(check_context(&ctx, &caps), Err(BackendError::EmptyPrompt)));
        let mut ctx = GenerationContext::new(None, vec![1, 2]);
        ctx.push(3);
        assert!(check_context(&ctx, &caps).is_ok());
        ctx.push(4);
        assert!(matches!(check_context(&ctx, &caps), Err(BackendError::ContextOverflow { len: 4, max: 3 })));
        let img = GenerationContext::new(Some(ImageHandle::new("x")), vec![1]);
        assert!(matches!(check_context(&img, &caps), Err(BackendError::ImageUnsupported)));
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::DEFAULT_TOP_K;
use crate::linguistics::MAX_LOOKAHEAD_TOKENS;
use crate::summarizer::DEFAULT_SUMMARY_MAX_TOKENS;

/// Token budgets used by length sweeps.
pub const SWEEP_LENGTHS: [usize; 4] = [64, 128, 256, 512];

/// Prefix prepended to the instruction for modified-instruction contrast.
pub const DEFAULT_CONTRAST_PREFIX: &str = "You are a confused object detector.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Nucleus,
    Beam,
    Contrastive,
    Sumgd,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Nucleus => "nucleus",
            Strategy::Beam => "beam",
            Strategy::Contrastive => "contrastive",
            Strategy::Sumgd => "sumgd",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastMode {
    /// Same prompt, noised image.
    DistortedImage,
    /// Same image, instruction with a misleading prefix.
    ModifiedInstruction,
    /// Same prompt, image removed.
    NoImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant,
    /// `alpha_t = alpha * t / max_new_tokens` with `t` the 0-based position.
    LinearInT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastSpec {
    pub contrast_mode: ContrastMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_schedule")]
    pub alpha_schedule: AlphaSchedule,
    /// Tokens below `plausibility_cutoff * max p` are never selected.
    #[serde(default = "default_cutoff")]
    pub plausibility_cutoff: f64,
    /// Instruction prefix for [`ContrastMode::ModifiedInstruction`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast_prefix: Option<String>,
}

impl ContrastSpec {
    pub fn new(contrast_mode: ContrastMode, alpha: f64) -> Self {
        Self {
            contrast_mode,
            alpha,
            alpha_schedule: AlphaSchedule::Constant,
            plausibility_cutoff: default_cutoff(),
            contrast_prefix: None,
        }
    }

    pub fn alpha_at(&self, position: usize, max_new_tokens: usize) -> f64 {
        match self.alpha_schedule {
            AlphaSchedule::Constant => self.alpha,
            AlphaSchedule::LinearInT => self.alpha * position as f64 / max_new_tokens.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosScope {
    /// Only PROPN, ADJ, NOUN and NUM tokens come from the summary context.
    ImageRelated,
    /// Every token comes from the summary context.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryScope {
    /// Re-summarize the whole generated text after every sentence.
    Full,
    /// Summarize only the sentence just completed and append it.
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Propose from the summary context; fall back to the full context for
    /// language-related tags.
    SummaryFirst,
    /// Propose from the full context; switch to the summary context for
    /// image-related tags.
    FullFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarizerKind {
    Identity,
    Extractive,
    /// Prompted summary from the generation model itself.
    #[serde(rename = "self")]
    SelfSummary,
    /// Prompted summary from a separate summarization model.
    Distilled,
}

impl SummarizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SummarizerKind::Identity => "identity",
            SummarizerKind::Extractive => "extractive",
            SummarizerKind::SelfSummary => "self",
            SummarizerKind::Distilled => "distilled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SumgdSpec {
    #[serde(default = "default_pos_scope")]
    pub pos_scope: PosScope,
    #[serde(default = "default_summarizer")]
    pub summarizer: SummarizerKind,
    #[serde(default = "default_summary_scope")]
    pub summary_scope: SummaryScope,
    #[serde(default = "default_routing")]
    pub routing: Routing,
    #[serde(default = "default_summary_max_tokens")]
    pub summary_max_tokens: usize,
    #[serde(default = "default_max_lookahead")]
    pub max_lookahead_tokens: usize,
}

impl Default for SumgdSpec {
    fn default() -> Self {
        Self {
            pos_scope: default_pos_scope(),
            summarizer: default_summarizer(),
            summary_scope: default_summary_scope(),
            routing: default_routing(),
            summary_max_tokens: default_summary_max_tokens(),
            max_lookahead_tokens: default_max_lookahead(),
        }
    }
}

impl SumgdSpec {
    pub fn with_summarizer(summarizer: SummarizerKind) -> Self {
        Self { summarizer, ..Self::default() }
    }
}

/// Everything a decode needs besides the backend and the context. Fields not
/// used by the chosen strategy are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    /// Label used in reports; defaults to the strategy name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_num_beams")]
    pub num_beams: usize,
    #[serde(default = "default_repetition_penalty")]
    pub repetition_penalty: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast: Option<ContrastSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sumgd: Option<SumgdSpec>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("top_p must lie in (0, 1], got {0}")]
    InvalidTopP(f64),
    #[error("num_beams must be at least 1")]
    ZeroBeams,
    #[error("repetition_penalty must be positive, got {0}")]
    InvalidPenalty(f64),
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("strategy {0} needs a [{1}] section")]
    MissingSection(Strategy, &'static str),
    #[error("alpha must be non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("plausibility_cutoff must lie in [0, 1], got {0}")]
    InvalidCutoff(f64),
    #[error("alpha_schedule linear_in_t requires contrast_mode no_image")]
    ScheduleNeedsNoImage,
    #[error("max_lookahead_tokens must be at least 1")]
    ZeroLookahead,
    #[error("cannot parse config: {0}")]
    Parse(String),
}

impl DecodeConfig {
    /// Settings that only approximate a published method; recorded in run
    /// manifests.
    pub fn approximations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.contrast.as_ref().is_some_and(|c| c.alpha_schedule == AlphaSchedule::LinearInT) {
            out.push("alpha_schedule linear_in_t approximates the M3ID schedule".to_string());
        }
        out
    }

    pub fn new(strategy: Strategy) -> Self {
        let mut cfg: Self = serde_json::from_value(serde_json::json!({ "strategy": strategy })).expect("defaults");
        match strategy {
            Strategy::Contrastive => cfg.contrast = Some(ContrastSpec::new(ContrastMode::NoImage, 1.0)),
            Strategy::Sumgd => cfg.sumgd = Some(SumgdSpec::default()),
            _ => {}
        }
        cfg
    }

    pub fn greedy() -> Self {
        Self::new(Strategy::Greedy)
    }

    pub fn with_max_new_tokens(mut self, n: usize) -> Self {
        self.max_new_tokens = n;
        self
    }

    pub fn with_contrast(mut self, contrast: ContrastSpec) -> Self {
        self.contrast = Some(contrast);
        self
    }

    pub fn with_sumgd(mut self, sumgd: SumgdSpec) -> Self {
        self.sumgd = Some(sumgd);
        self
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.strategy.to_string())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ConfigError::InvalidTopP(self.top_p));
        }
        if self.num_beams == 0 {
            return Err(ConfigError::ZeroBeams);
        }
        if !(self.repetition_penalty > 0.0 && self.repetition_penalty.is_finite()) {
            return Err(ConfigError::InvalidPenalty(self.repetition_penalty));
        }
        if self.top_k == 0 {
            return Err(ConfigError::ZeroTopK);
        }
        match self.strategy {
            Strategy::Contrastive => {
                let c = self.contrast.as_ref().ok_or(ConfigError::MissingSection(self.strategy, "contrast"))?;
                if !(c.alpha >= 0.0 && c.alpha.is_finite()) {
                    return Err(ConfigError::InvalidAlpha(c.alpha));
                }
                if !(0.0..=1.0).contains(&c.plausibility_cutoff) {
                    return Err(ConfigError::InvalidCutoff(c.plausibility_cutoff));
                }
                if c.alpha_schedule == AlphaSchedule::LinearInT && c.contrast_mode != ContrastMode::NoImage {
                    return Err(ConfigError::ScheduleNeedsNoImage);
                }
            }
            Strategy::Sumgd => {
                let s = self.sumgd.as_ref().ok_or(ConfigError::MissingSection(self.strategy, "sumgd"))?;
                if s.max_lookahead_tokens == 0 {
                    return Err(ConfigError::ZeroLookahead);
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn default_alpha() -> f64 {
    1.0
}
fn default_schedule() -> AlphaSchedule {
    AlphaSchedule::Constant
}
fn default_cutoff() -> f64 {
    0.1
}
fn default_pos_scope() -> PosScope {
    PosScope::ImageRelated
}
fn default_summarizer() -> SummarizerKind {
    SummarizerKind::SelfSummary
}
fn default_summary_scope() -> SummaryScope {
    SummaryScope::Full
}
fn default_routing() -> Routing {
    Routing::SummaryFirst
}
fn default_summary_max_tokens() -> usize {
    DEFAULT_SUMMARY_MAX_TOKENS
}
fn default_max_lookahead() -> usize {
    MAX_LOOKAHEAD_TOKENS
}
fn default_max_new_tokens() -> usize {
    512
}
fn default_top_p() -> f64 {
    0.9
}
fn default_num_beams() -> usize {
    5
}
fn default_repetition_penalty() -> f64 {
    1.0
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

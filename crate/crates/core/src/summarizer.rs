//! Summarizers that shorten the generated text used as conditioning.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationContext, HttpBackend, DEFAULT_TOP_K};
use crate::dist::argmax_token;
use crate::linguistics::Linguistics;
use crate::scalar::Scalar;

/// Self-summarization prompt sent to the generation model.
pub const SELF_SUMMARY_TEMPLATE: &str = "USER: Summarize the following caption in briefly.\nCaption: <<caption>> ASSISTANT:";

/// Prompt for the distilled summarization model.
pub const DISTILLED_SUMMARY_TEMPLATE: &str = "<<Caption>> \nWhat is a summary of this text?";

/// Default cap on generated summary tokens.
pub const DEFAULT_SUMMARY_MAX_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SummaryVariant {
    #[serde(rename = "self")]
    SelfSummary,
    #[serde(rename = "distilled")]
    Distilled,
}

impl SummaryVariant {
    pub fn template(self) -> &'static str {
        match self {
            SummaryVariant::SelfSummary => SELF_SUMMARY_TEMPLATE,
            SummaryVariant::Distilled => DISTILLED_SUMMARY_TEMPLATE,
        }
    }
}

/// Substitutes the caption into a template's `<<caption>>` / `<<Caption>>` slot.
pub fn assemble_prompt(template: &str, caption: &str) -> String {
    template.replace("<<caption>>", caption).replace("<<Caption>>", caption)
}

#[derive(Debug, Error)]
pub enum SummarizerError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("summarizer returned an empty summary")]
    EmptySummary { backend_calls: usize },
    #[error("nothing to summarize")]
    EmptyInput,
}

/// Conditioning summary owned by one decode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryState {
    pub summary_text: String,
    pub source_char_len: usize,
    pub summary_char_len: usize,
    /// Number of summarize steps so far (one per completed sentence).
    pub revision: usize,
}

impl SummaryState {
    pub fn next(&self, source: &str, summary: String) -> Self {
        Self {
            source_char_len: source.chars().count(),
            summary_char_len: summary.chars().count(),
            summary_text: summary,
            revision: self.revision + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub text: String,
    /// Model calls spent producing the summary.
    pub backend_calls: usize,
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, text: &str) -> Result<Summary, SummarizerError>;

    fn name(&self) -> &str;
}

/// Returns its input verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentitySummarizer;

impl Summarizer for IdentitySummarizer {
    fn summarize(&self, text: &str) -> Result<Summary, SummarizerError> {
        if text.is_empty() {
            return Err(SummarizerError::EmptyInput);
        }
        Ok(Summary { text: text.to_string(), backend_calls: 0 })
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// Deterministic stand-in for a summarization model: keeps the first sentence
/// and, from every later sentence, only the words with image-related tags.
#[derive(Clone, Default)]
pub struct ExtractiveSummarizer {
    linguistics: Linguistics,
}

impl ExtractiveSummarizer {
    pub fn new(linguistics: Linguistics) -> Self {
        Self { linguistics }
    }
}

impl Summarizer for ExtractiveSummarizer {
    fn summarize(&self, text: &str) -> Result<Summary, SummarizerError> {
        let sentences = self.linguistics.segmenter.split(text);
        let Some((first, rest)) = sentences.split_first() else {
            return Err(SummarizerError::EmptyInput);
        };
        let mut out = first.to_string();
        let kept: Vec<&str> = rest
            .iter()
            .flat_map(|s| self.linguistics.tag_text(s))
            .filter(|(_, tag)| tag.is_image_related())
            .map(|(w, _)| w)
            .collect();
        if !kept.is_empty() {
            out.push(' ');
            out.push_str(&kept.join(" "));
        }
        Ok(Summary { text: out, backend_calls: 0 })
    }

    fn name(&self) -> &str {
        "extractive"
    }
}

/// Summarizes by prompting a model with a template and decoding greedily.
///
/// With [`SummaryVariant::SelfSummary`] the model is the generation backend
/// itself; with [`SummaryVariant::Distilled`] it is a separate, smaller model.
/// The summary query is text-only.
pub struct PromptSummarizer<'a, T: Scalar> {
    model: &'a dyn Backend<T>,
    variant: SummaryVariant,
    template: String,
    max_tokens: usize,
    top_k: usize,
}

impl<'a, T: Scalar> PromptSummarizer<'a, T> {
    pub fn new(model: &'a dyn Backend<T>, variant: SummaryVariant) -> Self {
        Self {
            model,
            variant,
            template: variant.template().to_string(),
            max_tokens: DEFAULT_SUMMARY_MAX_TOKENS,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn prompt_for(&self, caption: &str) -> String {
        assemble_prompt(&self.template, caption)
    }
}

impl<T: Scalar> Summarizer for PromptSummarizer<'_, T> {
    fn summarize(&self, text: &str) -> Result<Summary, SummarizerError> {
        if text.is_empty() {
            return Err(SummarizerError::EmptyInput);
        }
        let prompt = self.model.tokenize(&self.prompt_for(text))?;
        let eos = self.model.eos_token();
        let mut ctx = GenerationContext::new(None, prompt);
        let mut calls = 0;
        for _ in 0..self.max_tokens {
            let step = self.model.next_distribution(&ctx, self.top_k)?;
            calls += step.calls_consumed;
            let token = argmax_token(&step.distribution).map_err(BackendError::from)?;
            if Some(token) == eos {
                break;
            }
            ctx.push(token);
        }
        let summary = self.model.detokenize(&ctx.history)?.trim().to_string();
        if summary.is_empty() {
            return Err(SummarizerError::EmptySummary { backend_calls: calls });
        }
        Ok(Summary { text: summary, backend_calls: calls })
    }

    fn name(&self) -> &str {
        match self.variant {
            SummaryVariant::SelfSummary => "self",
            SummaryVariant::Distilled => "distilled",
        }
    }
}

/// Delegates to the sidecar's `/v1/summarize` endpoint, which applies the
/// template server-side. Counted as one backend call per summary.
pub struct RemoteSummarizer {
    client: Arc<HttpBackend>,
    variant: SummaryVariant,
}

impl RemoteSummarizer {
    pub fn new(client: Arc<HttpBackend>, variant: SummaryVariant) -> Self {
        Self { client, variant }
    }
}

impl Summarizer for RemoteSummarizer {
    fn summarize(&self, text: &str) -> Result<Summary, SummarizerError> {
        if text.is_empty() {
            return Err(SummarizerError::EmptyInput);
        }
        let summary = self.client.summarize(text, self.variant)?.trim().to_string();
        if summary.is_empty() {
            return Err(SummarizerError::EmptySummary { backend_calls: 1 });
        }
        Ok(Summary { text: summary, backend_calls: 1 })
    }

    fn name(&self) -> &str {
        match self.variant {
            SummaryVariant::SelfSummary => "remote-self",
            SummaryVariant::Distilled => "remote-distilled",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Rule, ScriptedBackend};

    #[test]
    fn identity_is_verbatim() {
        let s = IdentitySummarizer.summarize("A cat sits on a mat.").unwrap();
        assert_eq!(s.text, "A cat sits on a mat.");
        assert!(matches!(IdentitySummarizer.summarize(""), Err(SummarizerError::EmptyInput)));
    }

    #[test]
    fn extractive_keeps_first_sentence_and_image_words() {
        let s = ExtractiveSummarizer::default()
            .summarize("A cat sits. The small cat is near a red ball.")
            .unwrap();
        assert_eq!(s.text, "A cat sits. small cat red ball");
        let single = ExtractiveSummarizer::default().summarize("A dog runs.").unwrap();
        assert_eq!(single.text, "A dog runs.");
    }

    #[test]
    fn templates_are_byte_exact() {
        assert_eq!(
            assemble_prompt(SELF_SUMMARY_TEMPLATE, "A dog."),
            "USER: Summarize the following caption in briefly.\nCaption: A dog. ASSISTANT:"
        );
        assert_eq!(
            assemble_prompt(DISTILLED_SUMMARY_TEMPLATE, "A dog."),
            "A dog. \nWhat is a summary of this text?"
        );
    }

    #[test]
    fn variant_wire_names() {
        assert_eq!(serde_json::to_string(&SummaryVariant::SelfSummary).unwrap(), "\"self\"");
        assert_eq!(serde_json::to_string(&SummaryVariant::Distilled).unwrap(), "\"distilled\"");
    }

    #[test]
    fn prompt_summarizer_decodes_greedily_and_counts_calls() {
        let model = ScriptedBackend::<f64>::from_rules(vec![
            Rule::new("^", [("dog", 1.0)]).prompt_contains("Summarize the following caption"),
            Rule::new("^dog", [("park", 1.0)]),
            Rule::new("^dog park", [("<eos>", 1.0)]),
        ])
        .unwrap();
        let s = PromptSummarizer::new(&model, SummaryVariant::SelfSummary);
        let out = s.summarize("a dog runs in a park .").unwrap();
        assert_eq!(out.text, "dog park");
        assert_eq!(out.backend_calls, 3);
        let d = PromptSummarizer::new(&model, SummaryVariant::Distilled);
        assert!(matches!(d.summarize("a dog ."), Err(SummarizerError::EmptySummary { backend_calls: 1 })));
    }

    #[test]
    fn state_tracks_revision_and_lengths() {
        let s = SummaryState::default().next("a long caption", "short".into());
        assert_eq!((s.revision, s.source_char_len, s.summary_char_len), (1, 14, 5));
    }
}

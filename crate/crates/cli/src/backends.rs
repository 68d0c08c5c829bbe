//! Backend spec strings and summarizer selection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use sumgd_core::backend::{
    Backend, BackendCapabilities, BackendError, GenerationContext, HttpBackend, NgramBackend, ScriptedBackend,
    StepResult, SyntheticConfig, SyntheticHallucinationBackend,
};
use sumgd_core::decoding::{DecodeConfig, Strategy, SummarizerKind};
use sumgd_core::dist::TokenId;
use sumgd_core::linguistics::Linguistics;
use sumgd_core::summarizer::{
    ExtractiveSummarizer, IdentitySummarizer, PromptSummarizer, RemoteSummarizer, Summarizer, SummaryVariant,
};

use crate::dataset::Dataset;
use crate::{read, CliError};

pub const DEFAULT_NGRAM_ORDER: usize = 3;

/// Any backend the CLI can build from a spec string.
pub enum AnyBackend {
    Scripted(ScriptedBackend<f64>),
    Ngram(NgramBackend<f64>),
    Synthetic(SyntheticHallucinationBackend<f64>),
    Http(Arc<HttpBackend>),
}

macro_rules! each {
    ($self:ident, $b:ident => $e:expr) => {
        match $self {
            AnyBackend::Scripted($b) => $e,
            AnyBackend::Ngram($b) => $e,
            AnyBackend::Synthetic($b) => $e,
            AnyBackend::Http(h) => {
                let $b: &HttpBackend = h;
                $e
            }
        }
    };
}

impl Backend<f64> for AnyBackend {
    fn capabilities(&self) -> BackendCapabilities {
        each!(self, b => Backend::<f64>::capabilities(b))
    }

    fn next_distribution(&self, ctx: &GenerationContext, top_k: usize) -> Result<StepResult<f64>, BackendError> {
        each!(self, b => b.next_distribution(ctx, top_k))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        each!(self, b => Backend::<f64>::tokenize(b, text))
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        each!(self, b => Backend::<f64>::detokenize(b, tokens))
    }

    fn ends_word(&self, token: TokenId) -> Option<bool> {
        each!(self, b => Backend::<f64>::ends_word(b, token))
    }

    fn eos_token(&self) -> Option<TokenId> {
        each!(self, b => Backend::<f64>::eos_token(b))
    }
}

impl AnyBackend {
    pub fn http(&self) -> Option<&Arc<HttpBackend>> {
        match self {
            AnyBackend::Http(h) => Some(h),
            _ => None,
        }
    }
}

/// Builds a backend from its spec:
///
/// * `scripted:RULES.json`
/// * `ngram:CORPUS.txt[:ORDER]`
/// * `synthetic[:slope=F,max_off_mass=F,novelty_penalty=F,seed=N]`, whose
///   images are the dataset's annotated objects
/// * `http[:URL]`, with the URL defaulting to `$SUMGD_SIDECAR_URL`
pub fn build_backend(spec: &str, dataset: Option<&Dataset>) -> Result<AnyBackend, CliError> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "scripted" => {
            if rest.is_empty() {
                return Err(CliError::Usage("scripted backend needs a rule file: scripted:PATH".into()));
            }
            let table = sumgd_core::backend::RuleTable::from_json(&read(Path::new(rest))?)
                .map_err(|e| CliError::Config(format!("{rest}: {e}")))?;
            Ok(AnyBackend::Scripted(ScriptedBackend::new(table).map_err(|e| CliError::Config(e.to_string()))?))
        }
        "ngram" => {
            let (path, order) = match rest.rsplit_once(':') {
                Some((p, o)) if o.chars().all(|c| c.is_ascii_digit()) && !o.is_empty() => {
                    (p, o.parse::<usize>().map_err(|e| CliError::Usage(e.to_string()))?)
                }
                _ => (rest, DEFAULT_NGRAM_ORDER),
            };
            if path.is_empty() {
                return Err(CliError::Usage("ngram backend needs a corpus: ngram:PATH[:ORDER]".into()));
            }
            if order == 0 {
                return Err(CliError::Usage("ngram order must be at least 1".into()));
            }
            Ok(AnyBackend::Ngram(NgramBackend::train(&read(Path::new(path))?, order)))
        }
        "synthetic" => {
            let config = synthetic_config(rest)?;
            let dataset = dataset.ok_or_else(|| CliError::Usage("synthetic backend needs a dataset".into()))?;
            let images: BTreeMap<String, BTreeSet<String>> = dataset
                .images
                .iter()
                .map(|id| {
                    let objects = dataset.annotations.get(id).cloned().unwrap_or_default();
                    (dataset.image_ref(id).to_string(), objects)
                })
                .collect();
            Ok(AnyBackend::Synthetic(
                SyntheticHallucinationBackend::new(config, &images).map_err(|e| CliError::Data(e.to_string()))?,
            ))
        }
        "http" => {
            let client = if rest.is_empty() { HttpBackend::from_env() } else { HttpBackend::connect(rest) }?;
            Ok(AnyBackend::Http(Arc::new(client)))
        }
        other => Err(CliError::Usage(format!("unknown backend kind {other:?}"))),
    }
}

fn synthetic_config(params: &str) -> Result<SyntheticConfig, CliError> {
    let mut c = SyntheticConfig::default();
    for kv in params.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("expected key=value, got {kv:?}")))?;
        let bad = |e: &dyn std::fmt::Display| CliError::Usage(format!("{k}: {e}"));
        match k {
            "slope" => c.slope = v.parse().map_err(|e| bad(&e))?,
            "max_off_mass" => c.max_off_mass = v.parse().map_err(|e| bad(&e))?,
            "novelty_penalty" => c.novelty_penalty = v.parse().map_err(|e| bad(&e))?,
            "seed" => c.seed = v.parse().map_err(|e| bad(&e))?,
            _ => return Err(CliError::Usage(format!("unknown synthetic parameter {k:?}"))),
        }
    }
    Ok(c)
}

/// The summarizer a summary-guided config asks for.
///
/// `self` summarizes with the generation backend (through the sidecar's
/// summarize endpoint when it is remote). `distilled` uses
/// `summarizer_backend`, or the generation sidecar's distilled model when no
/// separate backend is given.
pub fn build_summarizer<'a>(
    cfg: &DecodeConfig,
    backend: &'a AnyBackend,
    summarizer_backend: Option<&'a AnyBackend>,
    linguistics: &Linguistics,
) -> Result<Option<Box<dyn Summarizer + 'a>>, CliError> {
    let Some(spec) = cfg.sumgd.as_ref().filter(|_| cfg.strategy == Strategy::Sumgd) else {
        return Ok(None);
    };
    let prompt = |model: &'a AnyBackend, variant: SummaryVariant| -> Box<dyn Summarizer + 'a> {
        match model.http() {
            Some(h) => Box::new(RemoteSummarizer::new(h.clone(), variant)),
            None => Box::new(
                PromptSummarizer::new(model as &dyn Backend<f64>, variant).with_max_tokens(spec.summary_max_tokens),
            ),
        }
    };
    Ok(Some(match spec.summarizer {
        SummarizerKind::Identity => Box::new(IdentitySummarizer),
        SummarizerKind::Extractive => Box::new(ExtractiveSummarizer::new(linguistics.clone())),
        SummarizerKind::SelfSummary => prompt(backend, SummaryVariant::SelfSummary),
        SummarizerKind::Distilled => match (summarizer_backend, backend.http()) {
            (Some(s), _) => prompt(s, SummaryVariant::Distilled),
            (None, Some(_)) => prompt(backend, SummaryVariant::Distilled),
            (None, None) => {
                return Err(CliError::Config(
                    "the distilled summarizer needs --summarizer-backend or an http backend".into(),
                ))
            }
        },
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_specs() {
        assert_eq!(build_backend("nope", None).err().unwrap().exit_code(), 1);
        assert_eq!(build_backend("scripted:", None).err().unwrap().exit_code(), 1);
        assert_eq!(build_backend("scripted:/does/not/exist.json", None).err().unwrap().exit_code(), 4);
        assert_eq!(build_backend("synthetic", None).err().unwrap().exit_code(), 1);
        assert!(synthetic_config("slope=x").is_err());
        assert_eq!(synthetic_config("slope=0.01,seed=3").unwrap().seed, 3);
    }

    #[test]
    fn unreachable_sidecar_is_a_backend_error() {
        let err = build_backend("http:http://127.0.0.1:9", None).err().unwrap();
        assert_eq!(err.exit_code(), 3);
    }
}

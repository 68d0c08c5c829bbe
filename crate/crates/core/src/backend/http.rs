//! Blocking JSON-over-HTTP client for the model sidecar.
//!
//! Endpoints (all JSON):
//!
//! | method | path                | request                                   | response                          |
//! |--------|---------------------|-------------------------------------------|-----------------------------------|
//! | GET    | `/v1/capabilities`  | -                                         | [`BackendCapabilities`]           |
//! | POST   | `/v1/distribution`  | `{image?, prompt, tokens, top_k}`         | [`WireDistribution`]              |
//! | POST   | `/v1/tokenize`      | `{text}`                                  | `{tokens}`                        |
//! | POST   | `/v1/detokenize`    | `{tokens}`                                | `{text}`                          |
//! | POST   | `/v1/summarize`     | `{text, variant: "self" \| "distilled"}`  | `{summary}`                       |
//!
//! Status 413 maps to [`BackendError::ContextOverflow`], 503 and transport
//! failures to [`BackendError::BackendUnavailable`].

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{check_context, AttentionBalance, Backend, BackendCapabilities, BackendError, GenerationContext, StepResult};
use crate::dist::{TokenDistribution, TokenId};
use crate::scalar::Scalar;
use crate::summarizer::SummaryVariant;

/// Environment variable holding the sidecar base URL.
pub const SIDECAR_URL_ENV: &str = "SUMGD_SIDECAR_URL";

/// Tolerance on the total mass of a wire payload before renormalization.
const WIRE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireEntry {
    pub token_id: TokenId,
    pub logprob: f64,
}

/// Top-k log-probabilities as sent by the sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireDistribution {
    pub entries: Vec<WireEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionBalance>,
}

impl WireDistribution {
    /// Converts to a [`TokenDistribution`], renormalizing payloads whose mass
    /// is within `1e-4` of one.
    pub fn into_distribution<T: Scalar>(self, vocab_size: usize) -> Result<TokenDistribution<T>, BackendError> {
        let probs: Vec<(TokenId, f64)> = self.entries.iter().map(|e| (e.token_id, e.logprob.exp())).collect();
        let explicit: f64 = probs.iter().map(|p| p.1).sum();
        let residual = match self.residual_logprob {
            Some(lp) => lp.exp(),
            None => (1.0 - explicit).max(0.0),
        };
        let total = explicit + residual;
        if !total.is_finite() || (total - 1.0).abs() > WIRE_TOLERANCE {
            return Err(BackendError::Protocol(format!("distribution mass {total} is not within 1e-4 of 1")));
        }
        let entries = probs.into_iter().map(|(t, p)| (t, T::of(p / total)));
        let residual = residual / total;
        let dist = if residual > 0.0 || self.entries.len() < vocab_size {
            TokenDistribution::truncated(entries, vocab_size, T::of(residual))?
        } else {
            TokenDistribution::new(entries, vocab_size)?
        };
        Ok(dist)
    }
}

#[derive(Serialize)]
struct DistributionRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<&'a str>,
    prompt: &'a str,
    tokens: &'a [TokenId],
    top_k: usize,
}

#[derive(Serialize)]
struct TextBody<'a> {
    text: &'a str,
}

#[derive(Serialize, Deserialize)]
struct TokensBody {
    tokens: Vec<TokenId>,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Serialize)]
struct SummarizeRequest<'a> {
    text: &'a str,
    variant: SummaryVariant,
}

#[derive(Deserialize)]
struct SummarizeReply {
    summary: String,
}

/// Sidecar client. Holds a pooled connection client and caches the
/// capabilities read at connect time.
pub struct HttpBackend {
    base: String,
    client: Client,
    caps: BackendCapabilities,
    prompt_cache: Mutex<HashMap<Vec<TokenId>, String>>,
}

impl HttpBackend {
    pub fn connect(base_url: &str) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let base = base_url.trim_end_matches('/').to_string();
        let resp = client
            .get(format!("{base}/v1/capabilities"))
            .send()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let caps: BackendCapabilities = parse(resp, 0)?;
        if caps.vocab_size == 0 || caps.max_context == 0 {
            return Err(BackendError::Protocol("capabilities report an empty vocabulary or context".into()));
        }
        Ok(Self { base, client, caps, prompt_cache: Mutex::new(HashMap::new()) })
    }

    /// Connects to the URL in [`SIDECAR_URL_ENV`].
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(SIDECAR_URL_ENV)
            .map_err(|_| BackendError::BackendUnavailable(format!("{SIDECAR_URL_ENV} is not set")))?;
        Self::connect(&url)
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B, ctx_len: usize) -> Result<R, BackendError> {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        parse(resp, ctx_len)
    }

    fn prompt_text(&self, prompt: &[TokenId]) -> Result<String, BackendError> {
        if let Some(text) = self.prompt_cache.lock().unwrap().get(prompt) {
            return Ok(text.clone());
        }
        let text = self.detokenize_remote(prompt)?;
        self.prompt_cache.lock().unwrap().insert(prompt.to_vec(), text.clone());
        Ok(text)
    }

    fn detokenize_remote(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        let reply: TextReply = self.post("/v1/detokenize", &TokensBody { tokens: tokens.to_vec() }, 0)?;
        Ok(reply.text)
    }

    /// Server-side summarization; the sidecar applies the variant's prompt
    /// template.
    pub fn summarize(&self, text: &str, variant: SummaryVariant) -> Result<String, BackendError> {
        let reply: SummarizeReply = self.post("/v1/summarize", &SummarizeRequest { text, variant }, 0)?;
        Ok(reply.summary)
    }
}

fn parse<R: for<'de> Deserialize<'de>>(resp: Response, ctx_len: usize) -> Result<R, BackendError> {
    let status = resp.status();
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        return Err(BackendError::ContextOverflow { len: ctx_len, max: 0 });
    }
    if status == StatusCode::SERVICE_UNAVAILABLE {
        return Err(BackendError::BackendUnavailable("sidecar is loading its model (503)".into()));
    }
    if !status.is_success() {
        let body = resp.text().unwrap_or_default();
        return Err(BackendError::Protocol(format!("status {status}: {body}")));
    }
    resp.json().map_err(|e| BackendError::Protocol(e.to_string()))
}

impl<T: Scalar> Backend<T> for HttpBackend {
    fn capabilities(&self) -> BackendCapabilities {
        self.caps.clone()
    }

    fn next_distribution(&self, ctx: &GenerationContext, top_k: usize) -> Result<StepResult<T>, BackendError> {
        check_context(ctx, &self.caps)?;
        let prompt = self.prompt_text(&ctx.prompt)?;
        let req = DistributionRequest {
            image: ctx.image.as_ref().map(|h| h.as_str()),
            prompt: &prompt,
            tokens: &ctx.history,
            top_k,
        };
        let wire: WireDistribution = self.post("/v1/distribution", &req, ctx.len()).map_err(|e| match e {
            BackendError::ContextOverflow { .. } => {
                BackendError::ContextOverflow { len: ctx.len(), max: self.caps.max_context }
            }
            other => other,
        })?;
        let attention = wire.attention;
        if let Some(a) = attention {
            if !a.is_valid() {
                return Err(BackendError::Protocol("attention masses do not sum to 1".into()));
            }
        }
        Ok(StepResult { distribution: wire.into_distribution(self.caps.vocab_size)?, attention, calls_consumed: 1 })
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        let reply: TokensBody = self.post("/v1/tokenize", &TextBody { text }, 0)?;
        Ok(reply.tokens)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        if tokens.is_empty() {
            return Ok(String::new());
        }
        self.detokenize_remote(tokens)
    }
}

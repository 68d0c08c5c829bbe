//! Language-prior analysis: how far the image-conditioned next-token
//! distribution is from the text-only one, step by step, and how that
//! distance varies with part of speech and position.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AttentionBalance, Backend, BackendError, GenerationContext};
use crate::decoding::{
    apply_repetition_penalty, decode, DecodeConfig, DecodeError, DecodeOutput, ObservedStep, Source, StepObserver,
    SumgdParts,
};
use crate::dist::{jsd, DistError, TokenId};
use crate::linguistics::{split_words, Linguistics, PosTag};
use crate::scalar::Scalar;
use crate::schema::SCHEMA_VERSION;

pub const DEFAULT_WINDOW: usize = 32;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("backend cannot condition on images, or the context has no image")]
    ImageUnsupported,
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error("probe file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStep {
    pub position: usize,
    pub token: TokenId,
    pub word: String,
    pub pos_tag: Option<PosTag>,
    /// Distance to the text-only distribution, in nats.
    pub jsd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionBalance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    /// Distance between primary and contrast distributions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast_jsd: Option<f64>,
}

/// Per-step probe of one decode; one entry per generated token.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorProbe {
    pub image_id: String,
    pub strategy: String,
    pub text: String,
    pub steps: Vec<ProbeStep>,
}

#[derive(Serialize, Deserialize)]
struct ProbeHeader {
    schema_version: String,
    image_id: String,
    strategy: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ProbeLine {
    Header(ProbeHeader),
    Step(ProbeStep),
}

impl PriorProbe {
    pub fn to_jsonl(&self) -> String {
        let header = ProbeHeader {
            schema_version: SCHEMA_VERSION.to_string(),
            image_id: self.image_id.clone(),
            strategy: self.strategy.clone(),
            text: self.text.clone(),
        };
        let mut out = serde_json::to_string(&ProbeLine::Header(header)).expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(&ProbeLine::Step(s.clone())).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, AnalysisError> {
        let mut probe: Option<PriorProbe> = None;
        let mut steps = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| AnalysisError::Parse(format!("line {}: {e}", i + 1)))? {
                ProbeLine::Header(h) => {
                    probe = Some(PriorProbe { image_id: h.image_id, strategy: h.strategy, text: h.text, steps: Vec::new() })
                }
                ProbeLine::Step(s) => steps.push(s),
            }
        }
        let mut probe = probe.ok_or_else(|| AnalysisError::Parse("no header line".into()))?;
        probe.steps = steps;
        Ok(probe)
    }
}

struct PriorObserver<'b, T: Scalar, B: Backend<T> + ?Sized> {
    backend: &'b B,
    top_k: usize,
    penalty: f64,
    /// Compare the selection distribution rather than the raw image-conditioned one.
    use_effective: bool,
    steps: Vec<ProbeStep>,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar, B: Backend<T> + ?Sized> StepObserver<T> for PriorObserver<'_, T, B> {
    fn observe(&mut self, step: &ObservedStep<'_, T>) -> Result<(), BackendError> {
        let text_only = self.backend.next_distribution(&step.context.text_only(), self.top_k)?;
        let text_only = apply_repetition_penalty(&text_only.distribution, &step.context.history, self.penalty);
        let needs_primary = !self.use_effective || step.contrast.is_some();
        let primary = if needs_primary { Some(self.backend.next_distribution(step.context, self.top_k)?) } else { None };
        let primary_dist = primary
            .as_ref()
            .map(|p| apply_repetition_penalty(&p.distribution, &step.context.history, self.penalty));
        let compared = match (&primary_dist, self.use_effective) {
            (Some(p), false) => p.as_ref(),
            _ => step.effective,
        };
        let d = jsd(compared, &text_only).map_err(dist_err)?.as_f64();
        let contrast_jsd = match (step.contrast, &primary_dist) {
            (Some(q), Some(p)) => Some(jsd(p.as_ref(), q).map_err(dist_err)?.as_f64()),
            _ => None,
        };
        self.steps.push(ProbeStep {
            position: step.position,
            token: step.token,
            word: self.backend.detokenize(&[step.token])?,
            pos_tag: None,
            jsd: d,
            attention: primary.and_then(|p| p.attention),
            source: Some(step.source),
            contrast_jsd,
        });
        Ok(())
    }
}

fn dist_err(e: DistError) -> BackendError {
    BackendError::Protocol(e.to_string())
}

fn observe<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    cfg: &DecodeConfig,
    parts: Option<SumgdParts<'_>>,
    linguistics: &Linguistics,
    use_effective: bool,
) -> Result<(DecodeOutput, Vec<ProbeStep>), AnalysisError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    let mut obs = PriorObserver {
        backend,
        top_k: cfg.top_k,
        penalty: cfg.repetition_penalty,
        use_effective,
        steps: Vec::new(),
        _scalar: std::marker::PhantomData::<T>,
    };
    let out = decode(backend, ctx, cfg, parts, &mut obs)?;
    let mut steps = obs.steps;
    let tags = token_tags(backend, &out.tokens, linguistics)?;
    for (s, tag) in steps.iter_mut().zip(tags) {
        s.pos_tag = tag;
    }
    Ok((out, steps))
}

/// Tag of the word each token belongs to, from tagging the whole text.
fn token_tags<T: Scalar, B: Backend<T> + ?Sized>(
    backend: &B,
    tokens: &[TokenId],
    linguistics: &Linguistics,
) -> Result<Vec<Option<PosTag>>, BackendError> {
    let text = backend.detokenize(tokens)?;
    let tags: Vec<PosTag> = linguistics.tag_text(&text).into_iter().map(|(_, t)| t).collect();
    let mut out = Vec::with_capacity(tokens.len());
    for i in 0..tokens.len() {
        let prefix = backend.detokenize(&tokens[..=i])?;
        let n = split_words(&prefix).len();
        out.push(n.checked_sub(1).and_then(|w| tags.get(w).copied()));
    }
    Ok(out)
}

/// Decodes with `cfg` while recording, at every step, the JSD between the
/// image-conditioned and the text-only next-token distributions. Probe calls
/// are not charged to the trace and do not change the output.
pub fn probe_decode<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    cfg: &DecodeConfig,
    parts: Option<SumgdParts<'_>>,
    linguistics: &Linguistics,
) -> Result<(DecodeOutput, PriorProbe), AnalysisError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    if ctx.image.is_none() || !backend.capabilities().supports_image {
        return Err(AnalysisError::ImageUnsupported);
    }
    let (out, steps) = observe(backend, ctx, cfg, parts, linguistics, false)?;
    let probe = PriorProbe {
        image_id: ctx.image.as_ref().map(|i| i.as_str().to_string()).unwrap_or_default(),
        strategy: cfg.label(),
        text: out.text.clone(),
        steps,
    };
    Ok((out, probe))
}

/// Per-step JSD between a method's selection distribution and the text-only
/// distribution of the full context, for one decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub strategy: String,
    pub text: String,
    pub jsd: Vec<f64>,
    pub pos_tags: Vec<Option<PosTag>>,
    pub sources: Vec<Source>,
    /// Primary vs contrast distance, for contrastive methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast_jsd: Option<Vec<f64>>,
}

/// Decodes once per config and records each method's curve. For
/// summary-guided decoding the selection distribution is that of whichever
/// context produced the token.
pub fn method_jsd_comparison<T, B>(
    backend: &B,
    ctx: &GenerationContext,
    configs: &[DecodeConfig],
    parts: Option<SumgdParts<'_>>,
    linguistics: &Linguistics,
) -> Result<BTreeMap<String, MethodCurve>, AnalysisError>
where
    T: Scalar,
    B: Backend<T> + ?Sized,
{
    if ctx.image.is_none() || !backend.capabilities().supports_image {
        return Err(AnalysisError::ImageUnsupported);
    }
    let mut out = BTreeMap::new();
    for cfg in configs {
        let (decoded, steps) = observe(backend, ctx, cfg, parts, linguistics, true)?;
        let contrast = steps.iter().map(|s| s.contrast_jsd).collect::<Option<Vec<f64>>>().filter(|v| !v.is_empty());
        out.insert(
            cfg.label(),
            MethodCurve {
                strategy: cfg.label(),
                text: decoded.text,
                jsd: steps.iter().map(|s| s.jsd).collect(),
                pos_tags: steps.iter().map(|s| s.pos_tag).collect(),
                sources: steps.iter().filter_map(|s| s.source).collect(),
                contrast_jsd: contrast,
            },
        );
    }
    Ok(out)
}

/// Mean of `count` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub mean: f64,
    pub count: usize,
}

#[derive(Default)]
struct Acc(f64, usize);

impl Acc {
    fn add(&mut self, v: f64) {
        self.0 += v;
        self.1 += 1;
    }

    fn mean(&self) -> Mean {
        Mean { mean: self.0 / self.1 as f64, count: self.1 }
    }
}

/// Mean JSD per tag over the first `window` steps of every probe. Untagged
/// steps and tags without samples are left out.
pub fn jsd_by_pos(probes: &[PriorProbe], window: usize) -> Result<BTreeMap<PosTag, Mean>, AnalysisError> {
    if window == 0 {
        return Err(AnalysisError::InvalidWindow);
    }
    let mut acc: BTreeMap<PosTag, Acc> = BTreeMap::new();
    for s in probes.iter().flat_map(|p| &p.steps) {
        if let (true, Some(tag)) = (s.position < window, s.pos_tag) {
            acc.entry(tag).or_default().add(s.jsd);
        }
    }
    Ok(acc.into_iter().map(|(k, a)| (k, a.mean())).collect())
}

/// Mean JSD per (tag, `position / interval`).
pub fn jsd_by_pos_interval(probes: &[PriorProbe], interval: usize) -> Result<BTreeMap<(PosTag, usize), Mean>, AnalysisError> {
    if interval == 0 {
        return Err(AnalysisError::InvalidWindow);
    }
    let mut acc: BTreeMap<(PosTag, usize), Acc> = BTreeMap::new();
    for s in probes.iter().flat_map(|p| &p.steps) {
        if let Some(tag) = s.pos_tag {
            acc.entry((tag, s.position / interval)).or_default().add(s.jsd);
        }
    }
    Ok(acc.into_iter().map(|(k, a)| (k, a.mean())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub interval: usize,
    pub image_mass: f64,
    pub text_mass: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTable {
    pub rows: Vec<AttentionRow>,
    /// Set when the probes carry no attention readings.
    pub warning: Option<String>,
}

/// Mean attention on image and text tokens per interval of positions.
pub fn attention_balance(probes: &[PriorProbe], interval: usize) -> Result<AttentionTable, AnalysisError> {
    if interval == 0 {
        return Err(AnalysisError::InvalidWindow);
    }
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for s in probes.iter().flat_map(|p| &p.steps) {
        if let Some(a) = s.attention {
            let e = acc.entry(s.position / interval).or_default();
            e.0 += a.image_mass;
            e.1 += a.text_mass;
            e.2 += 1;
        }
    }
    if acc.is_empty() {
        let warning = "backend reported no attention; attention balance is unavailable".to_string();
        log::warn!("{warning}");
        return Ok(AttentionTable { rows: Vec::new(), warning: Some(warning) });
    }
    let rows = acc
        .into_iter()
        .map(|(interval, (i, t, n))| AttentionRow { interval, image_mass: i / n as f64, text_mass: t / n as f64, count: n })
        .collect();
    Ok(AttentionTable { rows, warning: None })
}

pub fn pos_csv(table: &BTreeMap<PosTag, Mean>) -> String {
    let mut out = String::from("tag,mean_jsd,count\n");
    for (tag, m) in table {
        let _ = writeln!(out, "{},{},{}", tag.as_str(), m.mean, m.count);
    }
    out
}

pub fn pos_interval_csv(table: &BTreeMap<(PosTag, usize), Mean>) -> String {
    let mut out = String::from("tag,interval,mean_jsd,count\n");
    for ((tag, i), m) in table {
        let _ = writeln!(out, "{},{},{},{}", tag.as_str(), i, m.mean, m.count);
    }
    out
}

pub fn attention_csv(table: &AttentionTable) -> String {
    let mut out = String::from("interval,image_mass,text_mass,count\n");
    for r in &table.rows {
        let _ = writeln!(out, "{},{},{},{}", r.interval, r.image_mass, r.text_mass, r.count);
    }
    out
}

/// Long format: one row per (method, position).
pub fn method_csv(curves: &BTreeMap<String, MethodCurve>) -> String {
    let mut out = String::from("method,position,tag,source,jsd,contrast_jsd\n");
    for (name, c) in curves {
        for (i, v) in c.jsd.iter().enumerate() {
            let tag = c.pos_tags.get(i).copied().flatten().map_or("", PosTag::as_str);
            let source = c.sources.get(i).map_or(String::new(), |s| {
                serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
            });
            let contrast = c.contrast_jsd.as_ref().and_then(|v| v.get(i)).map_or(String::new(), |v| v.to_string());
            let _ = writeln!(out, "{name},{i},{tag},{source},{v},{contrast}");
        }
    }
    out
}

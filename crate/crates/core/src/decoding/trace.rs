use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::dist::TokenId;
use crate::linguistics::PosTag;
use crate::schema::SCHEMA_VERSION;
use crate::summarizer::SummaryState;

/// Which context produced an emitted token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "summary")]
    Summary,
    #[serde(rename = "contrastive")]
    Contrastive,
    #[serde(rename = "n/a")]
    NotApplicable,
}

/// Backend calls split by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub generation: usize,
    pub lookahead: usize,
    pub summarization: usize,
}

impl CallCounts {
    pub fn generation(n: usize) -> Self {
        Self { generation: n, ..Self::default() }
    }

    pub fn total(&self) -> usize {
        self.generation + self.lookahead + self.summarization
    }
}

impl Add for CallCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            generation: self.generation + o.generation,
            lookahead: self.lookahead + o.lookahead,
            summarization: self.summarization + o.summarization,
        }
    }
}

impl AddAssign for CallCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub position: usize,
    pub token: TokenId,
    /// Surface of the token; empty for the end-of-sequence step.
    pub word: String,
    pub pos_tag: Option<PosTag>,
    pub source: Source,
    pub backend_calls: usize,
    pub calls: CallCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jsd_vs_llm: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub eos: bool,
}

/// Per-step record of one decode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub strategy: String,
    pub steps: Vec<StepRecord>,
    pub total_backend_calls: usize,
    pub calls: CallCounts,
    pub summaries: Vec<SummaryState>,
}

impl DecodeTrace {
    pub fn new(strategy: impl Into<String>) -> Self {
        Self { strategy: strategy.into(), ..Self::default() }
    }

    pub fn push(&mut self, token: TokenId, word: String, pos_tag: Option<PosTag>, source: Source, calls: CallCounts, eos: bool) {
        self.total_backend_calls += calls.total();
        self.calls += calls;
        self.steps.push(StepRecord {
            position: self.steps.len(),
            token,
            word,
            pos_tag,
            source,
            backend_calls: calls.total(),
            calls,
            jsd_vs_llm: None,
            eos,
        });
    }

    /// Adds calls made after the last step was recorded to that step.
    pub fn charge_last(&mut self, calls: CallCounts) {
        if let Some(last) = self.steps.last_mut() {
            last.calls += calls;
            last.backend_calls = last.calls.total();
            self.total_backend_calls += calls.total();
            self.calls += calls;
        }
    }

    /// Steps that emitted a real token.
    pub fn tokens(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| !s.eos)
    }

    pub fn generated_tokens(&self) -> usize {
        self.tokens().count()
    }

    /// `total_backend_calls` equals the sum over steps, and the purpose split
    /// adds up on every step and in total.
    pub fn is_consistent(&self) -> bool {
        let sum: usize = self.steps.iter().map(|s| s.backend_calls).sum();
        let split = self.steps.iter().fold(CallCounts::default(), |acc, s| acc + s.calls);
        sum == self.total_backend_calls
            && split == self.calls
            && self.calls.total() == self.total_backend_calls
            && self.steps.iter().all(|s| s.calls.total() == s.backend_calls)
            && self.steps.windows(2).all(|w| w[0].position < w[1].position)
    }
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: String,
    pub run_id: String,
    pub image_id: String,
    pub strategy: String,
    pub text: String,
    pub total_backend_calls: usize,
    pub calls: CallCounts,
    pub summaries: Vec<SummaryState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Step(StepRecord),
}

impl DecodeTrace {
    /// JSONL: one header line, then one line per step.
    pub fn to_jsonl(&self, run_id: &str, image_id: &str, text: &str) -> String {
        let header = TraceHeader {
            schema_version: SCHEMA_VERSION.to_string(),
            run_id: run_id.to_string(),
            image_id: image_id.to_string(),
            strategy: self.strategy.clone(),
            text: text.to_string(),
            total_backend_calls: self.total_backend_calls,
            calls: self.calls,
            summaries: self.summaries.clone(),
        };
        let mut out = serde_json::to_string(&TraceLine::Header(header)).expect("header serializes");
        out.push('\n');
        for step in &self.steps {
            out.push_str(&serde_json::to_string(&TraceLine::Step(step.clone())).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<(TraceHeader, DecodeTrace), serde_json::Error> {
        let mut header = None;
        let mut steps = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                TraceLine::Header(h) => header = Some(h),
                TraceLine::Step(s) => steps.push(s),
            }
        }
        let header = header.ok_or_else(|| serde::de::Error::custom("trace has no header line"))?;
        let trace = DecodeTrace {
            strategy: header.strategy.clone(),
            steps,
            total_backend_calls: header.total_backend_calls,
            calls: header.calls,
            summaries: header.summaries.clone(),
        };
        Ok((header, trace))
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    chair_metrics, corpus_fluency, hallucination_by_position, Annotations, ChairCounts, MetricsError, NgramCounts,
    ObjectVocabulary, PositionBucket, DEFAULT_POSITION_BUCKET,
};
use crate::linguistics::SentenceSegmenter;
use crate::schema::SCHEMA_VERSION;

/// One line of a caption corpus (JSONL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    #[serde(default = "schema_version")]
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub image_id: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

impl CaptionRecord {
    pub fn new(image_id: impl Into<String>, caption: impl Into<String>) -> Self {
        Self { schema_version: schema_version(), run_id: None, image_id: image_id.into(), caption: caption.into(), trace_path: None }
    }

    /// Parses a JSONL corpus, skipping blank lines.
    pub fn parse_jsonl(text: &str) -> Result<Vec<Self>, MetricsError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| MetricsError::Parse(format!("line {}: {e}", i + 1))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOptions {
    pub ngram_orders: Vec<usize>,
    pub position_bucket: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self { ngram_orders: vec![1, 2], position_bucket: DEFAULT_POSITION_BUCKET }
    }
}

/// Scores from an external judge model. Never computed here.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub shr: Option<f64>,
    pub text_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    #[serde(flatten)]
    pub chair: ChairCounts,
    pub sentences: u64,
    pub ngrams: BTreeMap<String, NgramCounts>,
}

/// Metrics of one caption corpus. Percentages are ratios times 100; every
/// one of them can be recomputed from `counts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub chair_s: f64,
    pub chair_i: f64,
    pub recall: f64,
    pub spi: f64,
    pub ngram_fluency: BTreeMap<String, f64>,
    pub per_position_hallucination: Vec<PositionBucket>,
    pub counts: ReportCounts,
    pub judge: JudgeScores,
}

impl MetricsReport {
    /// Checks that every reported number follows from the counts.
    pub fn is_consistent(&self) -> bool {
        let c = &self.counts.chair;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        let spi = if c.captions == 0 { 0.0 } else { self.counts.sentences as f64 / c.captions as f64 };
        close(self.chair_s, c.chair_s_percent())
            && close(self.chair_i, c.chair_i_percent())
            && close(self.recall, c.recall_percent())
            && close(self.spi, spi)
            && self.ngram_fluency.len() == self.counts.ngrams.len()
            && self.ngram_fluency.iter().all(|(n, v)| self.counts.ngrams.get(n).is_some_and(|k| close(*v, 100.0 * k.ratio())))
            && self.per_position_hallucination.iter().all(|b| b.mentions > 0 && close(b.ratio, b.hallucinated as f64 / b.mentions as f64))
    }
}

/// Full report over a caption corpus.
pub fn evaluate(
    captions: &[CaptionRecord],
    annotations: &Annotations,
    vocab: &ObjectVocabulary,
    segmenter: &SentenceSegmenter,
    options: &EvaluateOptions,
) -> Result<MetricsReport, MetricsError> {
    let pairs = || captions.iter().map(|c| (c.image_id.as_str(), c.caption.as_str()));
    let chair = chair_metrics(pairs(), annotations, vocab)?;
    let per_position = hallucination_by_position(pairs(), annotations, vocab, options.position_bucket)?;
    let sentences: u64 = captions.iter().map(|c| segmenter.count(&c.caption) as u64).sum();
    let mut ngrams = BTreeMap::new();
    let mut fluency = BTreeMap::new();
    for &n in &options.ngram_orders {
        let counts = corpus_fluency(captions.iter().map(|c| c.caption.as_str()), n)?;
        fluency.insert(n.to_string(), 100.0 * counts.ratio());
        ngrams.insert(n.to_string(), counts);
    }
    Ok(MetricsReport {
        schema_version: schema_version(),
        chair_s: chair.chair_s_percent(),
        chair_i: chair.chair_i_percent(),
        recall: chair.recall_percent(),
        spi: sentences as f64 / chair.captions as f64,
        ngram_fluency: fluency,
        per_position_hallucination: per_position,
        counts: ReportCounts { chair, sentences, ngrams },
        judge: JudgeScores::default(),
    })
}

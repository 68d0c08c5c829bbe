//! Caption hallucination metrics: CHAIR, recall, sentences per image,
//! n-gram fluency and hallucination by word position.

mod chair;
mod compare;
mod fluency;
mod objects;
mod position;
mod report;

use thiserror::Error;

pub use chair::{chair_metrics, ChairCounts};
pub use compare::{compare_runs, ComparisonRow, ComparisonTable, RunSummary};
pub use fluency::{corpus_fluency, ngram_counts, ngram_fluency, NgramCounts};
pub use objects::{extract_objects, Annotations, Mention, ObjectVocabulary};
pub use position::{hallucination_by_position, sentences_per_image, PositionBucket, DEFAULT_POSITION_BUCKET};
pub use report::{evaluate, CaptionRecord, EvaluateOptions, JudgeScores, MetricsReport, ReportCounts};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no annotation for image {0:?}")]
    MissingAnnotation(String),
    #[error("caption corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    InvalidN,
    #[error("position bucket width must be at least 1")]
    InvalidBucket,
    #[error("synonym {word:?} maps to both {first:?} and {second:?}")]
    AmbiguousSynonym { word: String, first: String, second: String },
    #[error("image {image:?}: {object:?} is not in the object vocabulary")]
    UnknownObject { image: String, object: String },
    #[error("runs are not comparable: {0}")]
    Incompatible(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use serde::{Deserialize, Serialize};

use super::{Annotations, MetricsError, ObjectVocabulary};
use crate::linguistics::SentenceSegmenter;

pub const DEFAULT_POSITION_BUCKET: usize = 32;

/// Object mentions whose first word falls in `[start, end]` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionBucket {
    pub bucket: usize,
    pub start: usize,
    pub end: usize,
    pub hallucinated: u64,
    pub mentions: u64,
    pub ratio: f64,
}

/// Hallucinated share of object mentions by word position. Positions are the
/// first-mention word positions of [`ObjectVocabulary::extract`]; buckets
/// without mentions are left out.
pub fn hallucination_by_position<'a, I>(
    captions: I,
    annotations: &Annotations,
    vocab: &ObjectVocabulary,
    bucket: usize,
) -> Result<Vec<PositionBucket>, MetricsError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    if bucket == 0 {
        return Err(MetricsError::InvalidBucket);
    }
    let mut counts: Vec<(u64, u64)> = Vec::new();
    for (image, caption) in captions {
        let truth = annotations.get(image).ok_or_else(|| MetricsError::MissingAnnotation(image.to_string()))?;
        for m in vocab.extract(caption) {
            let b = (m.position - 1) / bucket;
            if counts.len() <= b {
                counts.resize(b + 1, (0, 0));
            }
            counts[b].1 += 1;
            if !truth.contains(&m.object) {
                counts[b].0 += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(b, (h, n))| PositionBucket {
            bucket: b,
            start: b * bucket + 1,
            end: (b + 1) * bucket,
            hallucinated: h,
            mentions: n,
            ratio: h as f64 / n as f64,
        })
        .collect())
}

/// Mean number of sentences per caption; 0 for an empty list.
pub fn sentences_per_image<'a>(captions: impl IntoIterator<Item = &'a str>, segmenter: &SentenceSegmenter) -> f64 {
    let (mut sentences, mut n) = (0usize, 0usize);
    for c in captions {
        sentences += segmenter.count(c);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sentences as f64 / n as f64
    }
}

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Distinct and total n-grams of a text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramCounts {
    pub unique: u64,
    pub total: u64,
}

impl NgramCounts {
    /// `unique / total`, or 1 when there are no n-grams.
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.unique as f64 / self.total as f64
        }
    }
}

/// N-grams over whitespace-separated words.
pub fn ngram_counts(text: &str, n: usize) -> Result<NgramCounts, MetricsError> {
    if n == 0 {
        return Err(MetricsError::InvalidN);
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < n {
        return Ok(NgramCounts::default());
    }
    let grams: Vec<&[&str]> = words.windows(n).collect();
    let unique: HashSet<&[&str]> = grams.iter().copied().collect();
    Ok(NgramCounts { unique: unique.len() as u64, total: grams.len() as u64 })
}

/// Share of distinct n-grams in `text`. Texts shorter than `n` words score 1.
pub fn ngram_fluency(text: &str, n: usize) -> Result<f64, MetricsError> {
    Ok(ngram_counts(text, n)?.ratio())
}

/// Per-caption distinct counts summed over a corpus.
pub fn corpus_fluency<'a>(texts: impl IntoIterator<Item = &'a str>, n: usize) -> Result<NgramCounts, MetricsError> {
    let mut acc = NgramCounts::default();
    for t in texts {
        let c = ngram_counts(t, n)?;
        acc.unique += c.unique;
        acc.total += c.total;
    }
    Ok(acc)
}

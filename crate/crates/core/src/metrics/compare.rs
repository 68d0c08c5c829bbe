use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsReport};
use crate::decoding::CallCounts;

/// What `compare_runs` needs to know about one evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub strategy: String,
    pub max_new_tokens: usize,
    /// Identifies the image set; runs on different datasets do not compare.
    pub dataset: String,
    pub report: MetricsReport,
    pub calls: CallCounts,
    pub generated_tokens: u64,
}

impl RunSummary {
    pub fn calls_per_token(&self) -> f64 {
        if self.generated_tokens == 0 {
            0.0
        } else {
            self.calls.total() as f64 / self.generated_tokens as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub strategy: String,
    pub max_new_tokens: usize,
    pub chair_s: f64,
    pub chair_i: f64,
    pub recall: f64,
    pub spi: f64,
    pub ngram_fluency: BTreeMap<String, f64>,
    pub calls: CallCounts,
    pub total_calls: usize,
    pub generated_tokens: u64,
    pub calls_per_token: f64,
    /// Calls per token relative to the greedy run with the same token budget
    /// (or any greedy run when none matches). Absent without a greedy run.
    pub relative_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub schema_version: String,
    pub dataset: String,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side table of at least two runs over the same dataset.
pub fn compare_runs(runs: &[RunSummary]) -> Result<ComparisonTable, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::Incompatible(format!("need at least two runs, got {}", runs.len())));
    }
    let datasets: BTreeSet<&str> = runs.iter().map(|r| r.dataset.as_str()).collect();
    if datasets.len() > 1 {
        return Err(MetricsError::Incompatible(format!("different datasets: {datasets:?}")));
    }
    let greedy_cost = |budget: usize| {
        let greedy = || runs.iter().filter(|r| r.strategy == "greedy" && r.generated_tokens > 0);
        greedy().find(|r| r.max_new_tokens == budget).or_else(|| greedy().next()).map(RunSummary::calls_per_token)
    };
    let rows = runs
        .iter()
        .map(|r| {
            let cpt = r.calls_per_token();
            ComparisonRow {
                method: r.label.clone(),
                strategy: r.strategy.clone(),
                max_new_tokens: r.max_new_tokens,
                chair_s: r.report.chair_s,
                chair_i: r.report.chair_i,
                recall: r.report.recall,
                spi: r.report.spi,
                ngram_fluency: r.report.ngram_fluency.clone(),
                calls: r.calls,
                total_calls: r.calls.total(),
                generated_tokens: r.generated_tokens,
                calls_per_token: cpt,
                relative_cost: greedy_cost(r.max_new_tokens).filter(|g| *g > 0.0).map(|g| cpt / g),
            }
        })
        .collect();
    Ok(ComparisonTable { schema_version: crate::schema::SCHEMA_VERSION.to_string(), dataset: runs[0].dataset.clone(), rows })
}

impl ComparisonTable {
    /// Markdown rendering: CHAIR columns followed by relative inference cost.
    pub fn to_markdown(&self) -> String {
        let orders: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.ngram_fluency.keys()).collect();
        let mut out = String::from("| Method | Max tokens | C_S | C_I | R | SPI |");
        for n in &orders {
            let _ = write!(out, " {n}-gram |");
        }
        out.push_str(" Calls | Calls/token | Relative cost |\n|---|---|---|---|---|---|");
        for _ in &orders {
            out.push_str("---|");
        }
        out.push_str("---|---|---|\n");
        for r in &self.rows {
            let _ = write!(
                out,
                "| {} | {} | {:.1} | {:.1} | {:.1} | {:.2} |",
                r.method, r.max_new_tokens, r.chair_s, r.chair_i, r.recall, r.spi
            );
            for n in &orders {
                match r.ngram_fluency.get(*n) {
                    Some(v) => {
                        let _ = write!(out, " {v:.2} |");
                    }
                    None => out.push_str(" - |"),
                }
            }
            let rel = r.relative_cost.map_or_else(|| "-".to_string(), |c| format!("{c:.2}"));
            let _ = writeln!(out, " {} | {:.3} | {} |", r.total_calls, r.calls_per_token, rel);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linguistics::SentenceSegmenter;
    use crate::metrics::{evaluate, Annotations, CaptionRecord, EvaluateOptions, ObjectVocabulary};

    fn run(label: &str, strategy: &str, calls: CallCounts, tokens: u64) -> RunSummary {
        let v = ObjectVocabulary::builtin();
        let a = Annotations::new([("1".to_string(), vec!["dog"])], v).unwrap();
        let report = evaluate(
            &[CaptionRecord::new("1", "a dog.")],
            &a,
            v,
            SentenceSegmenter::builtin(),
            &EvaluateOptions::default(),
        )
        .unwrap();
        RunSummary {
            label: label.into(),
            strategy: strategy.into(),
            max_new_tokens: 64,
            dataset: "toy".into(),
            report,
            calls,
            generated_tokens: tokens,
        }
    }

    #[test]
    fn greedy_normalized_costs() {
        let g = run("greedy", "greedy", CallCounts::generation(100), 100);
        let s = run("sumgd", "sumgd", CallCounts { generation: 150, lookahead: 100, summarization: 50 }, 100);
        let t = compare_runs(&[g, s]).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].relative_cost, Some(1.0));
        assert_eq!(t.rows[1].relative_cost, Some(3.0));
        assert_eq!(t.rows[1].total_calls, 300);
        let md = t.to_markdown();
        assert!(md.contains("| sumgd | 64 |"));
        assert!(md.contains("| 300 | 3.000 | 3.00 |"));
    }

    #[test]
    fn incompatible_runs() {
        let g = run("greedy", "greedy", CallCounts::generation(1), 1);
        assert!(compare_runs(std::slice::from_ref(&g)).is_err());
        let mut other = g.clone();
        other.dataset = "other".into();
        assert!(matches!(compare_runs(&[g, other]), Err(MetricsError::Incompatible(_))));
    }

    #[test]
    fn no_greedy_means_no_ratio() {
        let a = run("a", "beam", CallCounts::generation(5), 1);
        let b = run("b", "nucleus", CallCounts::generation(1), 1);
        let t = compare_runs(&[a, b]).unwrap();
        assert!(t.rows.iter().all(|r| r.relative_cost.is_none()));
    }
}

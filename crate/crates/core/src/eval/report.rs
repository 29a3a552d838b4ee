//! Per-task results and their reduction into a report.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::benchmark::Domain;
use super::EvalError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Content,
    Layout,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Content => "content",
            Metric::Layout => "layout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Correct,
    Incorrect,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub sample_id: String,
    pub domain: Domain,
    pub metric: Metric,
    pub outcome: Outcome,
    /// Parsed answer, `None` when the reply could not be read.
    pub choice: Option<String>,
    pub expected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l_f: Option<f64>,
    /// Judge reply, or the transport error for skipped tasks.
    pub raw: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub attempted: usize,
    pub correct: usize,
    pub skipped: usize,
}

impl Counts {
    fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Correct => {
                self.attempted += 1;
                self.correct += 1;
            }
            Outcome::Incorrect => self.attempted += 1,
            Outcome::Skipped => self.skipped += 1,
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.attempted > 0).then(|| self.correct as f64 / self.attempted as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    #[serde(flatten)]
    pub counts: Counts,
    pub per_domain: BTreeMap<Domain, Counts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub content_acc: Option<f64>,
    pub layout_acc: Option<f64>,
    /// Mean ROUGE-L F1 of predicted against verified content.
    pub rouge_l_f: Option<f64>,
    pub content: Option<MetricSummary>,
    pub layout: Option<MetricSummary>,
    pub results: Vec<TaskResult>,
}

/// Accuracy is correct over attempted; skipped tasks leave the denominator.
pub fn aggregate(results: Vec<TaskResult>) -> Result<EvalReport, EvalError> {
    let mut by_metric: BTreeMap<Metric, (Counts, BTreeMap<Domain, Counts>)> = BTreeMap::new();
    let mut rouge = Vec::new();
    for r in &results {
        let (total, domains) = by_metric.entry(r.metric).or_default();
        total.add(r.outcome);
        domains.entry(r.domain).or_default().add(r.outcome);
        if let Some(f) = r.rouge_l_f {
            rouge.push(f);
        }
    }
    if by_metric.is_empty() {
        return Err(EvalError::NothingAttempted {
            metric: Metric::Content,
        });
    }
    let mut summaries = BTreeMap::new();
    for (metric, (counts, per_domain)) in by_metric {
        let accuracy = counts
            .accuracy()
            .ok_or(EvalError::NothingAttempted { metric })?;
        summaries.insert(
            metric,
            MetricSummary {
                accuracy,
                counts,
                per_domain,
            },
        );
    }
    let content = summaries.remove(&Metric::Content);
    let layout = summaries.remove(&Metric::Layout);
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        content_acc: content.as_ref().map(|s| s.accuracy),
        layout_acc: layout.as_ref().map(|s| s.accuracy),
        rouge_l_f: (!rouge.is_empty()).then(|| rouge.iter().sum::<f64>() / rouge.len() as f64),
        content,
        layout,
        results,
    })
}

impl EvalReport {
    /// One line per metric and domain, plus an `all` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,domain,attempted,correct,skipped,accuracy\n");
        for (metric, summary) in [
            (Metric::Content, &self.content),
            (Metric::Layout, &self.layout),
        ] {
            let Some(s) = summary else { continue };
            let mut row = |domain: &str, c: &Counts| {
                let acc = c.accuracy().map(|a| format!("{a:.6}")).unwrap_or_default();
                out.push_str(&format!(
                    "{metric},{domain},{},{},{},{acc}\n",
                    c.attempted, c.correct, c.skipped
                ));
            };
            row("all", &s.counts);
            for (d, c) in &s.per_domain {
                row(&d.to_string(), c);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: usize, domain: Domain, outcome: Outcome) -> TaskResult {
        TaskResult {
            sample_id: format!("s{id}"),
            domain,
            metric: Metric::Content,
            outcome,
            choice: None,
            expected: "1".into(),
            rouge_l_f: None,
            raw: String::new(),
        }
    }

    #[test]
    fn three_of_four() {
        let rs = vec![
            result(0, Domain::Web, Outcome::Correct),
            result(1, Domain::Web, Outcome::Correct),
            result(2, Domain::Os, Outcome::Correct),
            result(3, Domain::Os, Outcome::Incorrect),
        ];
        assert_eq!(aggregate(rs).unwrap().content_acc, Some(0.75));
    }

    #[test]
    fn skipped_are_excluded() {
        let rs = vec![
            result(0, Domain::Web, Outcome::Correct),
            result(1, Domain::Web, Outcome::Skipped),
            result(2, Domain::Web, Outcome::Incorrect),
        ];
        let rep = aggregate(rs).unwrap();
        assert_eq!(rep.content_acc, Some(0.5));
        assert_eq!(rep.content.unwrap().counts.skipped, 1);
    }

    #[test]
    fn nothing_attempted_is_an_error() {
        assert!(aggregate(vec![]).is_err());
        assert!(aggregate(vec![result(0, Domain::Web, Outcome::Skipped)]).is_err());
    }

    #[test]
    fn domain_splits_sum_to_totals() {
        let outcomes = [Outcome::Correct, Outcome::Incorrect, Outcome::Skipped];
        let domains = [Domain::Web, Domain::Mobile, Domain::Os];
        let rs: Vec<_> = (0..50)
            .map(|i| result(i, domains[i % 3], outcomes[(i * 7) % 3]))
            .collect();
        let s = aggregate(rs).unwrap().content.unwrap();
        let sum = s
            .per_domain
            .values()
            .fold(Counts::default(), |acc, c| Counts {
                attempted: acc.attempted + c.attempted,
                correct: acc.correct + c.correct,
                skipped: acc.skipped + c.skipped,
            });
        assert_eq!(sum, s.counts);
        assert_eq!(s.counts.attempted + s.counts.skipped, 50);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rep = aggregate(vec![result(0, Domain::Mobile, Outcome::Correct)]).unwrap();
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("content,mobile,1,1,0,1.000000"));
    }
}

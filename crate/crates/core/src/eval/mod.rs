//! Cycle-consistency evaluation of screen readers: an auxiliary model must
//! recover region identity and relative position from generated text.

pub mod benchmark;
pub mod content;
pub mod harness;
pub mod judges;
pub mod layout;
pub mod rating;
pub mod report;
pub mod rouge;
pub mod synthetic;

use std::path::PathBuf;

use regex::Regex;
use sha2::{Digest, Sha256};

pub use benchmark::{
    load_benchmark, load_predictions, parse_predictions, validate_samples, Benchmark,
    BenchmarkSample, DirSource, Domain, MemorySource, Prediction, SampleIssue, ScreenshotSource,
};
pub use content::{
    build_content_prompt, build_content_task, judge_content, parse_content_choice, ContentChoice,
    ContentTask, CONTENT_QUESTION, CONTENT_QUESTION_VERSION,
};
pub use harness::{run_content_eval, run_layout_eval, EvalOptions};
pub use judges::{oracle_predictions, OracleContentJudge, OracleLayoutJudge, RandomChoiceJudge};
pub use layout::{
    build_layout_task, ground_truth_relation, judge_layout, parse_relation, LayoutTask, Relation9,
    LAYOUT_QUESTION_VERSION,
};
pub use rating::{map_human_rating, mean_rating, HumanRating};
pub use report::{
    aggregate, EvalReport, Metric, MetricSummary, Outcome, TaskResult, REPORT_SCHEMA_VERSION,
};
pub use rouge::{lcs_len, rouge_l, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid benchmark:\n{}", list_issues(.0))]
    InvalidBenchmark(Vec<SampleIssue>),
    #[error("screenshot {reference}: {message}")]
    Image { reference: String, message: String },
    #[error("sample {id}: region lies outside its screenshot")]
    EmptyCrop { id: String },
    #[error("sample {id}: need {needed} distractors from other screenshots, found {available}")]
    InsufficientPool {
        id: String,
        needed: usize,
        available: usize,
    },
    #[error("no {metric} task was attempted")]
    NothingAttempted { metric: Metric },
    #[error(transparent)]
    Render(#[from] crate::lens::RenderError),
}

fn list_issues(issues: &[SampleIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Per-sample seed so task construction does not depend on iteration order.
pub fn task_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// The `"Answer"` field of a judge reply, tolerating prose around the JSON.
pub(crate) fn answer_field(reply: &str) -> Option<String> {
    if let (Some(start), Some(end)) = (reply.find('{'), reply.rfind('}')) {
        if start < end {
            if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&reply[start..=end]) {
                let found = map
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("answer"))
                    .map(|(_, v)| v);
                match found {
                    Some(serde_json::Value::String(s)) => return Some(s.trim().to_string()),
                    Some(serde_json::Value::Number(n)) => return Some(n.to_string()),
                    _ => {}
                }
            }
        }
    }
    let re = Regex::new(r#"(?i)"?answer"?\s*[:=]\s*"?([^"\n,}]+)"#).expect("static regex");
    re.captures(reply).map(|c| c[1].trim().to_string())
}

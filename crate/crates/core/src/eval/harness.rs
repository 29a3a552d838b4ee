//! Runs content and layout tasks over a benchmark with bounded parallelism.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::benchmark::{BenchmarkSample, Prediction, ScreenshotSource};
use super::content::{build_content_task, judge_content, ContentChoice};
use super::layout::{build_layout_task, judge_layout};
use super::report::{Metric, Outcome, TaskResult};
use super::rouge::rouge_l;
use super::{task_seed, EvalError};
use crate::describer::{ChatClient, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    /// Maximum judge calls in flight.
    pub jobs: usize,
    pub relation_deadband: f64,
    pub params: ModelParams,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 4,
            relation_deadband: 0.02,
            params: ModelParams::default(),
        }
    }
}

/// Order-preserving map over `items` with at most `jobs` worker threads.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every slot filled")
        })
        .collect()
}

fn prediction<'a>(
    predictions: &'a HashMap<String, Prediction>,
    id: &str,
) -> Option<&'a Prediction> {
    predictions.get(id)
}

/// Samples without a prediction are judged on an empty description.
pub fn run_content_eval(
    samples: &[BenchmarkSample],
    predictions: &HashMap<String, Prediction>,
    source: &dyn ScreenshotSource,
    auxiliary: &dyn ChatClient,
    opts: &EvalOptions,
) -> Result<Vec<TaskResult>, EvalError> {
    let tasks = samples
        .iter()
        .map(|s| {
            build_content_task(s, samples, source, task_seed(opts.seed, &s.id)).map(|t| (s, t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(par_map(&tasks, opts.jobs, |(sample, task)| {
        let description = prediction(predictions, &sample.id)
            .map(|p| p.content.as_str())
            .unwrap_or("");
        let rouge = Some(rouge_l::<f64>(description, &sample.content).f);
        let expected = (task.correct_index + 1).to_string();
        let base = |outcome, choice, raw| TaskResult {
            sample_id: sample.id.clone(),
            domain: sample.domain,
            metric: Metric::Content,
            outcome,
            choice,
            expected: expected.clone(),
            rouge_l_f: rouge,
            raw,
        };
        match judge_content(task, description, auxiliary, &opts.params) {
            Ok(j) => {
                let choice = j.choice.map(|c| match c {
                    ContentChoice::Index(i) => (i + 1).to_string(),
                    ContentChoice::Unknown => "unknown".to_string(),
                });
                base(
                    if j.correct {
                        Outcome::Correct
                    } else {
                        Outcome::Incorrect
                    },
                    choice,
                    j.raw,
                )
            }
            Err(e) => {
                tracing::warn!(sample = %sample.id, error = %e, "task skipped");
                base(Outcome::Skipped, None, e.to_string())
            }
        }
    }))
}

pub fn run_layout_eval(
    samples: &[BenchmarkSample],
    predictions: &HashMap<String, Prediction>,
    auxiliary: &dyn ChatClient,
    opts: &EvalOptions,
) -> Vec<TaskResult> {
    par_map(samples, opts.jobs, |sample| {
        let (target, reference) = prediction(predictions, &sample.id)
            .map(|p| (p.layout.as_str(), p.reference_layout.as_str()))
            .unwrap_or(("", ""));
        let task = build_layout_task(sample, target, reference, opts.relation_deadband);
        let (outcome, choice, raw) = match judge_layout(&task, auxiliary, &opts.params) {
            Ok(j) => (
                if j.correct {
                    Outcome::Correct
                } else {
                    Outcome::Incorrect
                },
                j.choice.map(|c| c.name().to_string()),
                j.raw,
            ),
            Err(e) => {
                tracing::warn!(sample = %sample.id, error = %e, "task skipped");
                (Outcome::Skipped, None, e.to_string())
            }
        };
        TaskResult {
            sample_id: sample.id.clone(),
            domain: sample.domain,
            metric: Metric::Layout,
            outcome,
            choice,
            expected: task.ground_truth.name().to_string(),
            rouge_l_f: None,
            raw,
        }
    })
}

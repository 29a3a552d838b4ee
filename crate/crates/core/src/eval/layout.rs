//! Nine-way relative position task between a target and a reference region.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::answer_field;
use super::benchmark::BenchmarkSample;
use crate::describer::{send_with_retries, ChatClient, ChatRequest, ModelParams, RetryError};
use crate::geometry::Rect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation9 {
    UpperLeft,
    Upper,
    UpperRight,
    Left,
    Same,
    Right,
    LowerLeft,
    Lower,
    LowerRight,
}

impl Relation9 {
    /// Row-major over the 3×3 compass grid.
    pub const ALL: [Relation9; 9] = [
        Relation9::UpperLeft,
        Relation9::Upper,
        Relation9::UpperRight,
        Relation9::Left,
        Relation9::Same,
        Relation9::Right,
        Relation9::LowerLeft,
        Relation9::Lower,
        Relation9::LowerRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation9::UpperLeft => "upper-left",
            Relation9::Upper => "upper",
            Relation9::UpperRight => "upper-right",
            Relation9::Left => "left",
            Relation9::Same => "same",
            Relation9::Right => "right",
            Relation9::LowerLeft => "lower-left",
            Relation9::Lower => "lower",
            Relation9::LowerRight => "lower-right",
        }
    }

    /// Column and row offsets in {-1, 0, 1}.
    pub fn offsets(self) -> (i8, i8) {
        let i = Relation9::ALL
            .iter()
            .position(|&r| r == self)
            .expect("listed") as i8;
        (i % 3 - 1, i / 3 - 1)
    }

    pub fn from_offsets(col: i8, row: i8) -> Relation9 {
        Relation9::ALL[((row.signum() + 1) * 3 + col.signum() + 1) as usize]
    }

    /// Point reflection through `Same`.
    pub fn opposite(self) -> Relation9 {
        let (c, r) = self.offsets();
        Relation9::from_offsets(-c, -r)
    }
}

impl fmt::Display for Relation9 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation9 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation9::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown relation {s:?}"))
    }
}

fn axis_offset(doubled_delta: i64, extent: u32, tau: f64) -> i8 {
    let band = 2.0 * tau * f64::from(extent);
    if (doubled_delta.unsigned_abs() as f64) <= band {
        0
    } else {
        doubled_delta.signum() as i8
    }
}

/// Position of `a` relative to `b` by center displacement, with a deadband of
/// `tau` times the screen width (columns) or height (rows). Centers are
/// compared at doubled resolution so odd sizes stay exact.
pub fn ground_truth_relation(
    a: &Rect,
    b: &Rect,
    screen_w: u32,
    screen_h: u32,
    tau: f64,
) -> Relation9 {
    let (ax, ay) = a.center_doubled();
    let (bx, by) = b.center_doubled();
    Relation9::from_offsets(
        axis_offset(ax - bx, screen_w, tau),
        axis_offset(ay - by, screen_h, tau),
    )
}

/// Reads a relation from free text, preferring the longest name so that
/// "upper-left" is not read as "upper".
pub fn parse_relation(text: &str) -> Option<Relation9> {
    let norm: String = text
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("-");
    let mut by_len = Relation9::ALL;
    by_len.sort_by_key(|r| std::cmp::Reverse(r.name().len()));
    by_len.into_iter().find(|r| norm.contains(r.name()))
}

pub const LAYOUT_QUESTION_VERSION: &str = "layout-question/1";

const LAYOUT_QUESTION: &str = "Two regions on the same screen are described below.

Region A: {{target}}
Region B: {{reference}}
End of descriptions.

Where is region A located relative to region B? Choose exactly one option from: {{choices}}.

Please provide your answer in the following JSON format:
{
    \"Analysis\": \"...\",
    \"Answer\": \"<one option>\"
}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutTask {
    pub sample_id: String,
    pub question: String,
    pub choices: Vec<Relation9>,
    pub ground_truth: Relation9,
}

pub fn build_layout_question(target: &str, reference: &str) -> String {
    let choices: Vec<&str> = Relation9::ALL.iter().map(|r| r.name()).collect();
    LAYOUT_QUESTION
        .replace("{{choices}}", &choices.join(", "))
        .replace("{{target}}", target)
        .replace("{{reference}}", reference)
}

/// Recovers both descriptions from a question built by [`build_layout_question`].
pub fn extract_layout_descriptions(question: &str) -> Option<(&str, &str)> {
    let a = question.find("Region A: ")? + "Region A: ".len();
    let b_marker = question[a..].find("\nRegion B: ")? + a;
    let b = b_marker + "\nRegion B: ".len();
    let end = question[b..].find("\nEnd of descriptions.")? + b;
    Some((&question[a..b_marker], &question[b..end]))
}

pub fn build_layout_task(
    sample: &BenchmarkSample,
    target: &str,
    reference: &str,
    tau: f64,
) -> LayoutTask {
    let (w, h) = sample.screen_size().unwrap_or((0, 0));
    LayoutTask {
        sample_id: sample.id.clone(),
        question: build_layout_question(target, reference),
        choices: Relation9::ALL.to_vec(),
        ground_truth: ground_truth_relation(&sample.region, &sample.ref_region, w, h, tau),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutJudgement {
    pub choice: Option<Relation9>,
    pub correct: bool,
    pub raw: String,
}

/// Text-only call; `Err` means the task is skipped.
pub fn judge_layout(
    task: &LayoutTask,
    auxiliary: &dyn ChatClient,
    params: &ModelParams,
) -> Result<LayoutJudgement, RetryError> {
    let raw = send_with_retries(
        auxiliary,
        &ChatRequest {
            images: &[],
            text: &task.question,
            params,
        },
    )?;
    let choice = answer_field(&raw).as_deref().and_then(parse_relation);
    Ok(LayoutJudgement {
        correct: choice == Some(task.ground_truth),
        choice,
        raw,
    })
}

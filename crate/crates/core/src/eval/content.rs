//! Four-way content task: pick the crop that matches a content description.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::benchmark::{BenchmarkSample, ScreenshotSource};
use super::{answer_field, EvalError};
use crate::describer::{send_with_retries, ChatClient, ChatRequest, ModelParams, RetryError};
use crate::lens::{crop, encode_png};

pub const CONTENT_QUESTION_VERSION: &str = "content-question/1";

pub const CONTENT_QUESTION: &str = "You are given four images, each cropped from a different GUI screenshot. They are numbered 1 to 4 in the order they are provided.

Description: {{description}}
End of description.

Which image shows the region described above? If none of the images matches the description, answer \"unknown\".

Please provide your answer in the following JSON format:
{
    \"Analysis\": \"...\",
    \"Answer\": \"1/2/3/4/unknown\"
}";

pub const CANDIDATES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub sample_id: String,
    #[serde(skip)]
    pub png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentTask {
    pub sample_id: String,
    pub question: String,
    pub candidates: Vec<Candidate>,
    pub correct_index: usize,
    pub allow_unknown: bool,
}

impl ContentTask {
    pub fn images(&self) -> Vec<Vec<u8>> {
        self.candidates.iter().map(|c| c.png.clone()).collect()
    }
}

pub(crate) fn crop_png(
    sample: &BenchmarkSample,
    source: &dyn ScreenshotSource,
) -> Result<Vec<u8>, EvalError> {
    let img = source.load(&sample.screenshot)?;
    let region = crop(&img, &sample.region).ok_or_else(|| EvalError::EmptyCrop {
        id: sample.id.clone(),
    })?;
    Ok(encode_png(&region)?)
}

/// Samples three distractors from `pool` entries on other screenshots and
/// shuffles all four candidates, both with one ChaCha8 stream.
pub fn build_content_task(
    sample: &BenchmarkSample,
    pool: &[BenchmarkSample],
    source: &dyn ScreenshotSource,
    seed: u64,
) -> Result<ContentTask, EvalError> {
    let others: Vec<&BenchmarkSample> = pool
        .iter()
        .filter(|s| s.screenshot != sample.screenshot && s.id != sample.id)
        .collect();
    let needed = CANDIDATES - 1;
    if others.len() < needed {
        return Err(EvalError::InsufficientPool {
            id: sample.id.clone(),
            needed,
            available: others.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<&BenchmarkSample> = vec![sample];
    picked.extend(
        index::sample(&mut rng, others.len(), needed)
            .into_iter()
            .map(|i| others[i]),
    );
    let mut order: Vec<usize> = (0..CANDIDATES).collect();
    order.shuffle(&mut rng);

    let mut candidates = Vec::with_capacity(CANDIDATES);
    let mut correct_index = 0;
    for (pos, &k) in order.iter().enumerate() {
        if k == 0 {
            correct_index = pos;
        }
        let s = picked[k];
        candidates.push(Candidate {
            sample_id: s.id.clone(),
            png: crop_png(s, source)?,
        });
    }
    Ok(ContentTask {
        sample_id: sample.id.clone(),
        question: CONTENT_QUESTION.to_string(),
        candidates,
        correct_index,
        allow_unknown: true,
    })
}

pub fn build_content_prompt(task: &ContentTask, description: &str) -> String {
    task.question.replace("{{description}}", description)
}

/// Recovers the description from a prompt built by [`build_content_prompt`].
pub fn extract_content_description(prompt: &str) -> Option<&str> {
    let start = prompt.find("Description: ")? + "Description: ".len();
    let end = prompt[start..].find("\nEnd of description.")? + start;
    Some(&prompt[start..end])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentChoice {
    /// Zero-based candidate position.
    Index(usize),
    Unknown,
}

pub fn parse_content_choice(reply: &str) -> Option<ContentChoice> {
    let answer = answer_field(reply)?;
    let answer = answer
        .trim()
        .trim_matches(|c: char| c == '"' || c == '.' || c == '(' || c == ')');
    if answer.eq_ignore_ascii_case("unknown") {
        return Some(ContentChoice::Unknown);
    }
    let digits: String = answer.chars().filter(char::is_ascii_digit).collect();
    match digits.parse::<usize>() {
        Ok(n) if (1..=CANDIDATES).contains(&n) && digits.len() == 1 => {
            Some(ContentChoice::Index(n - 1))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentJudgement {
    pub choice: Option<ContentChoice>,
    pub correct: bool,
    pub raw: String,
}

/// `Err` means the auxiliary model was unreachable; the task is skipped.
pub fn judge_content(
    task: &ContentTask,
    description: &str,
    auxiliary: &dyn ChatClient,
    params: &ModelParams,
) -> Result<ContentJudgement, RetryError> {
    let images = task.images();
    let text = build_content_prompt(task, description);
    let raw = send_with_retries(
        auxiliary,
        &ChatRequest {
            images: &images,
            text: &text,
            params,
        },
    )?;
    let choice = parse_content_choice(&raw);
    let correct = choice == Some(ContentChoice::Index(task.correct_index));
    Ok(ContentJudgement {
        choice,
        correct,
        raw,
    })
}

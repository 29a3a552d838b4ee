//! Auxiliary-model stand-ins used to calibrate the harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::benchmark::{BenchmarkSample, Prediction, ScreenshotSource};
use super::content::{crop_png, extract_content_description, CANDIDATES};
use super::layout::{extract_layout_descriptions, ground_truth_relation, Relation9};
use super::{task_seed, EvalError};
use crate::describer::{ChatClient, ChatRequest, ClientError};
use crate::geometry::Rect;

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn reply(answer: &str) -> String {
    serde_json::json!({ "Analysis": "oracle", "Answer": answer }).to_string()
}

fn layout_tag(rect: &Rect, w: u32, h: u32) -> String {
    format!(
        "box [{}, {}, {}, {}] on a {w}x{h} screen",
        rect.x, rect.y, rect.w, rect.h
    )
}

/// Predictions that carry their own ground truth: the content text ends with
/// the digest of the target crop and the layout text spells out the box.
pub fn oracle_predictions(
    samples: &[BenchmarkSample],
    source: &dyn ScreenshotSource,
) -> Result<Vec<Prediction>, EvalError> {
    samples
        .iter()
        .map(|s| {
            let (w, h) = s.screen_size().unwrap_or((0, 0));
            Ok(Prediction {
                id: s.id.clone(),
                content: format!(
                    "{} (crop-sha256:{})",
                    s.content,
                    sha_hex(&crop_png(s, source)?)
                ),
                layout: layout_tag(&s.region, w, h),
                reference_layout: layout_tag(&s.ref_region, w, h),
            })
        })
        .collect()
}

/// Picks the candidate whose PNG digest appears in the description.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleContentJudge;

impl ChatClient for OracleContentJudge {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let description = extract_content_description(request.text).unwrap_or("");
        let re = Regex::new(r"crop-sha256:([0-9a-f]{64})").expect("static regex");
        let wanted = re.captures(description).map(|c| c[1].to_string());
        let hit = wanted.and_then(|w| request.images.iter().position(|img| sha_hex(img) == w));
        Ok(match hit {
            Some(i) => reply(&(i + 1).to_string()),
            None => reply("unknown"),
        })
    }

    fn backend(&self) -> String {
        "oracle-content".into()
    }
}

/// Reads the boxes spelled out by [`oracle_predictions`] and classifies them.
#[derive(Debug, Clone, Copy)]
pub struct OracleLayoutJudge {
    pub tau: f64,
}

fn parse_tag(text: &str) -> Option<(Rect, u32, u32)> {
    let re = Regex::new(r"box \[(\d+), (\d+), (\d+), (\d+)\] on a (\d+)x(\d+) screen")
        .expect("static regex");
    let c = re.captures(text)?;
    let n = |i: usize| c[i].parse::<i64>().ok();
    let rect = Rect::new(n(1)?, n(2)?, n(3)?, n(4)?).ok()?;
    Some((rect, c[5].parse().ok()?, c[6].parse().ok()?))
}

impl ChatClient for OracleLayoutJudge {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let parsed = extract_layout_descriptions(request.text)
            .and_then(|(a, b)| Some((parse_tag(a)?, parse_tag(b)?)));
        Ok(match parsed {
            Some(((a, w, h), (b, _, _))) => {
                reply(ground_truth_relation(&a, &b, w, h, self.tau).name())
            }
            None => reply("unknown"),
        })
    }

    fn backend(&self) -> String {
        "oracle-layout".into()
    }
}

/// Answers uniformly at random. The draw is a function of the seed and the
/// request digest, so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct RandomChoiceJudge {
    pub seed: u64,
    pub options: Vec<String>,
}

impl RandomChoiceJudge {
    pub fn content(seed: u64) -> Self {
        Self {
            seed,
            options: (1..=CANDIDATES).map(|i| i.to_string()).collect(),
        }
    }

    pub fn layout(seed: u64) -> Self {
        Self {
            seed,
            options: Relation9::ALL
                .iter()
                .map(|r| r.name().to_string())
                .collect(),
        }
    }
}

impl ChatClient for RandomChoiceJudge {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(self.seed, &request.digest()));
        let pick = &self.options[rng.random_range(0..self.options.len())];
        Ok(reply(pick))
    }

    fn backend(&self) -> String {
        "mock-random".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::describer::ModelParams;
    use crate::eval::content::{build_content_task, judge_content};
    use crate::eval::layout::{build_layout_task, judge_layout};
    use crate::eval::synthetic::synthetic_benchmark;

    #[test]
    fn oracles_are_always_right() {
        let (samples, source) = synthetic_benchmark(40, 5);
        let preds = oracle_predictions(&samples, &source).unwrap();
        let params = ModelParams::default();
        for (i, (s, p)) in samples.iter().zip(&preds).enumerate() {
            let task = build_content_task(s, &samples, &source, i as u64).unwrap();
            assert!(
                judge_content(&task, &p.content, &OracleContentJudge, &params)
                    .unwrap()
                    .correct
            );
            let lt = build_layout_task(s, &p.layout, &p.reference_layout, 0.02);
            assert!(
                judge_layout(&lt, &OracleLayoutJudge { tau: 0.02 }, &params)
                    .unwrap()
                    .correct
            );
        }
    }

    #[test]
    fn oracle_layout_reads_tags() {
        let r = Rect::new(3, 4, 5, 6).unwrap();
        assert_eq!(parse_tag(&layout_tag(&r, 100, 80)), Some((r, 100, 80)));
        assert_eq!(parse_tag("top of the screen"), None);
    }

    #[test]
    fn random_judge_is_deterministic_per_request() {
        let j = RandomChoiceJudge::layout(9);
        let params = ModelParams::default();
        let req = ChatRequest {
            images: &[],
            text: "q",
            params: &params,
        };
        assert_eq!(j.send(&req).unwrap(), j.send(&req).unwrap());
    }
}

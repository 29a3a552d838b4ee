//! Step-level verification of navigation-agent trajectories: describe each
//! action target, ask a text judge whether to proceed, and score the verdicts.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::describer::{
    format_reply, read_path, send_with_retries, ChatClient, ChatRequest, ClientError, ModelParams,
    PipelineError, ReaderConfig, RegionDescription,
};
use crate::eval::answer_field;
use crate::geometry::{to_norm, PointPx, Rect};
use crate::hierarchy::{build_tree, DetectionFile, ScoredRegion};
use crate::lens::{encode_png, select_path_for_click, select_path_for_input_action, PathConfig};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
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
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("asset {reference}: {message}")]
    Asset { reference: String, message: String },
    #[error("step {index}: {source}")]
    Step { index: usize, source: PipelineError },
    #[error("no labels to score against")]
    NoLabels,
    #[error("{verdicts} verdicts but {labels} labels")]
    Misaligned { verdicts: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Click,
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<PointPx>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Rect>,
    pub screenshot: String,
    /// Detection file; absent means no regions (synthesized paths).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<String>,
    #[serde(default)]
    pub instruction: String,
    pub action_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepLabel {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(default)]
    pub id: String,
    pub goal: String,
    pub steps: Vec<ActionStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<StepLabel>>,
    /// Steps marked as part of an execution loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_labels: Option<Vec<bool>>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |m: String| {
            Err(VerifyError::Invalid(format!(
                "trajectory {:?}: {m}",
                self.id
            )))
        };
        for (i, s) in self.steps.iter().enumerate() {
            if s.index.is_some_and(|k| k != i) {
                return bad(format!(
                    "step {i} has index {}",
                    s.index.unwrap_or_default()
                ));
            }
            match s.kind {
                ActionKind::Click if s.point.is_none() => {
                    return bad(format!("click step {i} has no point"))
                }
                ActionKind::Input if s.region.is_none() => {
                    return bad(format!("input step {i} has no region"))
                }
                _ => {}
            }
            if let Some(c) = s.confidence {
                if !(0.0..=1.0).contains(&c) {
                    return bad(format!("step {i} confidence {c} outside [0, 1]"));
                }
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.steps.len() {
                return bad(format!("{} labels for {} steps", l.len(), self.steps.len()));
            }
        }
        if let Some(l) = &self.loop_labels {
            if l.len() != self.steps.len() {
                return bad(format!(
                    "{} loop labels for {} steps",
                    l.len(),
                    self.steps.len()
                ));
            }
        }
        Ok(())
    }
}

/// Reads one trajectory object or an array of them.
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>, serde_json::Error> {
    if text.trim_start().starts_with('[') {
        serde_json::from_str(text)
    } else {
        serde_json::from_str(text).map(|t| vec![t])
    }
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, VerifyError> {
    let text = std::fs::read_to_string(path).map_err(|source| VerifyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let trajs = parse_trajectories(&text).map_err(|source| VerifyError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    for t in &trajs {
        t.validate()?;
    }
    Ok(trajs)
}

pub trait StepAssets: Send + Sync {
    fn image(&self, reference: &str) -> Result<Arc<RgbImage>, VerifyError>;
    fn detections(&self, reference: &str) -> Result<Vec<ScoredRegion>, VerifyError>;
}

/// Files relative to a root directory; images are cached after decoding.
pub struct DirAssets {
    root: PathBuf,
    images: Mutex<HashMap<String, Arc<RgbImage>>>,
}

impl DirAssets {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            images: Mutex::new(HashMap::new()),
        }
    }
}

impl StepAssets for DirAssets {
    fn image(&self, reference: &str) -> Result<Arc<RgbImage>, VerifyError> {
        let mut cache = self.images.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(img) = cache.get(reference) {
            return Ok(img.clone());
        }
        let img = image::open(self.root.join(reference))
            .map_err(|e| VerifyError::Asset {
                reference: reference.into(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let img = Arc::new(img);
        cache.insert(reference.into(), img.clone());
        Ok(img)
    }

    fn detections(&self, reference: &str) -> Result<Vec<ScoredRegion>, VerifyError> {
        let bytes = std::fs::read(self.root.join(reference)).map_err(|e| VerifyError::Asset {
            reference: reference.into(),
            message: e.to_string(),
        })?;
        DetectionFile::from_json(&bytes)
            .map(|f| f.detections)
            .map_err(|e| VerifyError::Asset {
                reference: reference.into(),
                message: e.to_string(),
            })
    }
}

#[derive(Default, Clone)]
pub struct MemoryAssets {
    pub images: HashMap<String, Arc<RgbImage>>,
    pub detections: HashMap<String, Vec<ScoredRegion>>,
}

impl StepAssets for MemoryAssets {
    fn image(&self, reference: &str) -> Result<Arc<RgbImage>, VerifyError> {
        self.images
            .get(reference)
            .cloned()
            .ok_or_else(|| VerifyError::Asset {
                reference: reference.into(),
                message: "not found".into(),
            })
    }

    fn detections(&self, reference: &str) -> Result<Vec<ScoredRegion>, VerifyError> {
        self.detections
            .get(reference)
            .cloned()
            .ok_or_else(|| VerifyError::Asset {
                reference: reference.into(),
                message: "not found".into(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyConfig {
    pub reader: ReaderConfig,
    pub paths: PathConfig,
    pub confidence_baseline: f64,
}

impl VerifyConfig {
    pub fn with_defaults() -> Self {
        Self {
            reader: ReaderConfig::default(),
            paths: PathConfig::default(),
            confidence_baseline: 0.7,
        }
    }
}

/// Runs the point-reading pipeline on a step using the action-specific
/// path rules.
pub fn describe_step(
    step: &ActionStep,
    index: usize,
    assets: &dyn StepAssets,
    describer: &dyn ChatClient,
    cfg: &VerifyConfig,
) -> Result<RegionDescription, VerifyError> {
    let img = assets.image(&step.screenshot)?;
    let detections = match &step.detections {
        Some(r) => assets.detections(r)?,
        None => Vec::new(),
    };
    let step_err = |source: PipelineError| VerifyError::Step { index, source };
    let screen = Rect::screen(img.width(), img.height()).map_err(|e| VerifyError::Asset {
        reference: step.screenshot.clone(),
        message: e.to_string(),
    })?;
    let tree = build_tree(screen, &detections, &cfg.reader.tree).map_err(|e| step_err(e.into()))?;
    let path = match (step.kind, step.point, step.region) {
        (ActionKind::Click, Some(p), _) => {
            select_path_for_click(&tree, p, cfg.paths.click_expand_px)
        }
        (ActionKind::Input, _, Some(r)) => select_path_for_input_action(&tree, &r, &cfg.paths),
        _ => {
            return Err(VerifyError::Invalid(format!(
                "step {index} lacks its target"
            )))
        }
    }
    .map_err(|e| step_err(e.into()))?;
    read_path(&img, path, describer, &cfg.reader)
        .map(|r| r.description)
        .map_err(step_err)
}

/// Single-line text of a description as the judge sees it.
pub fn region_text(d: &RegionDescription) -> String {
    let text = if d.parse_ok {
        format_reply(&d.content, &d.layout)
    } else {
        d.raw.clone()
    };
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

const JUDGE_PROMPT: &str = "Given the following information in a mobile navigation task:
Historical action and region description: {{haction}}
Task Goal: {{goal}}
Current region: {{region}}

The agent now is going to interact with the \"Current region\" with the action: {{action}}. Should the agent proceed?
Note: The agent should not proceed if the \"Current region\" is repeated too often in \"Historical action and region description\".
Note: The agent may proceed if the \"Current region\" aligns with \"Task Goal\".

Please provide your answer in the following JSON format:
{
    \"Analysis\": \"...\",
    \"Answer\": \"yes/no\"
}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action_name: String,
    pub description: String,
}

fn history_line(k: usize, h: &HistoryEntry) -> String {
    format!(
        "{}. Action: {}; Region: {}",
        k + 1,
        h.action_name,
        h.description
    )
}

/// History renders one numbered line per prior step under its heading.
pub fn build_judge_prompt(
    history: &[HistoryEntry],
    goal: &str,
    current_description: &str,
    action_name: &str,
) -> String {
    let haction: String = history
        .iter()
        .enumerate()
        .map(|(k, h)| format!("\n{}", history_line(k, h)))
        .collect();
    JUDGE_PROMPT
        .replace(
            "Historical action and region description: {{haction}}",
            &format!("Historical action and region description:{haction}"),
        )
        .replace("{{goal}}", goal)
        .replace("{{region}}", current_description)
        .replace("{{action}}", action_name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub proceed: bool,
    pub analysis: String,
    pub raw: String,
}

/// Anything but a clear "yes" is treated as do-not-proceed.
pub fn parse_verdict(raw: &str) -> Verdict {
    let answer = answer_field(raw).map(|a| a.to_lowercase());
    let proceed = answer
        .as_deref()
        .is_some_and(|a| a.trim_matches(|c: char| !c.is_alphanumeric()) == "yes");
    let analysis = serde_json::from_str::<serde_json::Value>(
        raw.get(raw.find('{').unwrap_or(0)..=raw.rfind('}').unwrap_or(0))
            .unwrap_or(""),
    )
    .ok()
    .and_then(|v| {
        v.as_object()?
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("analysis"))
            .and_then(|(_, v)| v.as_str().map(str::to_string))
    })
    .unwrap_or_default();
    Verdict {
        proceed,
        analysis,
        raw: raw.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepVerdict {
    pub index: usize,
    pub action_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Why no verdict was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl StepVerdict {
    pub fn proceed(&self) -> Option<bool> {
        self.verdict.as_ref().map(|v| v.proceed)
    }

    fn skip(index: usize, step: &ActionStep, reason: String) -> Self {
        Self {
            index,
            action_name: step.action_name.clone(),
            description: None,
            verdict: None,
            skipped: Some(reason),
        }
    }
}

fn judge(
    judge: &dyn ChatClient,
    images: &[Vec<u8>],
    prompt: &str,
    params: &ModelParams,
) -> Result<Verdict, String> {
    send_with_retries(
        judge,
        &ChatRequest {
            images,
            text: prompt,
            params,
        },
    )
    .map(|raw| parse_verdict(&raw))
    .map_err(|e| e.to_string())
}

/// Step `t` is judged with the descriptions of steps `0..t` as history.
/// Steps whose description failed stay in the history with an empty region.
pub fn verify_trajectory(
    traj: &Trajectory,
    assets: &dyn StepAssets,
    describer: &dyn ChatClient,
    judge_client: &dyn ChatClient,
    cfg: &VerifyConfig,
) -> Vec<StepVerdict> {
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut out = Vec::with_capacity(traj.steps.len());
    for (t, step) in traj.steps.iter().enumerate() {
        let described = describe_step(step, t, assets, describer, cfg).map(|d| region_text(&d));
        let verdict = match &described {
            Ok(text) => {
                let prompt = build_judge_prompt(&history, &traj.goal, text, &step.action_name);
                match judge(judge_client, &[], &prompt, &cfg.reader.params) {
                    Ok(v) => StepVerdict {
                        index: t,
                        action_name: step.action_name.clone(),
                        description: Some(text.clone()),
                        verdict: Some(v),
                        skipped: None,
                    },
                    Err(e) => StepVerdict {
                        description: Some(text.clone()),
                        ..StepVerdict::skip(t, step, e)
                    },
                }
            }
            Err(e) => StepVerdict::skip(t, step, e.to_string()),
        };
        out.push(verdict);
        history.push(HistoryEntry {
            action_name: step.action_name.clone(),
            description: described.unwrap_or_default(),
        });
    }
    out
}

fn direct_region(step: &ActionStep, img: &RgbImage) -> String {
    let point = step.point.or(step.region.map(|r| r.center()));
    let at = point
        .and_then(|p| to_norm(p, img.width(), img.height()).ok())
        .map(|n| {
            format!(
                "the element at (x,y) = ({:.2},{:.2}) on the attached screenshot",
                n.x, n.y
            )
        })
        .unwrap_or_else(|| "an element on the attached screenshot".into());
    if step.instruction.is_empty() {
        at
    } else {
        format!("{at}; instruction: {}", step.instruction)
    }
}

/// Judge sees the raw screenshot and the action target instead of lens
/// descriptions.
pub fn verify_direct(
    traj: &Trajectory,
    assets: &dyn StepAssets,
    judge_client: &dyn ChatClient,
    cfg: &VerifyConfig,
) -> Vec<StepVerdict> {
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut out = Vec::with_capacity(traj.steps.len());
    for (t, step) in traj.steps.iter().enumerate() {
        let prepared = assets.image(&step.screenshot).and_then(|img| {
            let png = encode_png(&img).map_err(|e| VerifyError::Asset {
                reference: step.screenshot.clone(),
                message: e.to_string(),
            })?;
            Ok((direct_region(step, &img), png))
        });
        match prepared {
            Ok((region, png)) => {
                let prompt = build_judge_prompt(&history, &traj.goal, &region, &step.action_name);
                let v = match judge(judge_client, &[png], &prompt, &cfg.reader.params) {
                    Ok(v) => StepVerdict {
                        index: t,
                        action_name: step.action_name.clone(),
                        description: Some(region.clone()),
                        verdict: Some(v),
                        skipped: None,
                    },
                    Err(e) => StepVerdict::skip(t, step, e),
                };
                out.push(v);
                history.push(HistoryEntry {
                    action_name: step.action_name.clone(),
                    description: region,
                });
            }
            Err(e) => {
                out.push(StepVerdict::skip(t, step, e.to_string()));
                history.push(HistoryEntry {
                    action_name: step.action_name.clone(),
                    description: String::new(),
                });
            }
        }
    }
    out
}

/// Proceeds exactly when the agent's confidence is strictly above `threshold`.
pub fn baseline_confidence_filter(traj: &Trajectory, threshold: f64) -> Vec<StepVerdict> {
    traj.steps
        .iter()
        .enumerate()
        .map(|(t, step)| match step.confidence {
            Some(c) => {
                let proceed = c > threshold;
                StepVerdict {
                    index: t,
                    action_name: step.action_name.clone(),
                    description: None,
                    verdict: Some(Verdict {
                        proceed,
                        analysis: format!(
                            "confidence {c} {} {threshold}",
                            if proceed { ">" } else { "<=" }
                        ),
                        raw: String::new(),
                    }),
                    skipped: None,
                }
            }
            None => StepVerdict::skip(t, step, "missing confidence".into()),
        })
        .collect()
}

/// Says "no" once the current region already appears `min_repeats` times in
/// the history, "yes" otherwise.
#[derive(Debug, Clone, Copy)]
pub struct RepetitionJudge {
    pub min_repeats: usize,
}

impl Default for RepetitionJudge {
    fn default() -> Self {
        Self { min_repeats: 3 }
    }
}

impl ChatClient for RepetitionJudge {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let text = request.text;
        let current = text
            .lines()
            .find_map(|l| l.strip_prefix("Current region: "))
            .ok_or_else(|| ClientError::Decode("prompt has no current region".into()))?;
        let repeats = text
            .lines()
            .take_while(|l| !l.starts_with("Task Goal:"))
            .filter_map(|l| l.split_once("; Region: ").map(|(_, d)| d))
            .filter(|d| *d == current)
            .count();
        let proceed = repeats < self.min_repeats;
        Ok(serde_json::json!({
            "Analysis": format!("current region seen {repeats} time(s) before"),
            "Answer": if proceed { "yes" } else { "no" },
        })
        .to_string())
    }

    fn backend(&self) -> String {
        "mock-repetition".into()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// Incorrect action, flagged.
    pub tp: u64,
    /// Incorrect action, allowed.
    pub fn_: u64,
    /// Correct action, flagged.
    pub fp: u64,
    /// Correct action, allowed.
    pub tn: u64,
}

impl Confusion {
    pub fn from_outcomes(pairs: impl IntoIterator<Item = (bool, StepLabel)>) -> Self {
        let mut c = Confusion::default();
        for (proceed, label) in pairs {
            match (label, proceed) {
                (StepLabel::Incorrect, false) => c.tp += 1,
                (StepLabel::Incorrect, true) => c.fn_ += 1,
                (StepLabel::Correct, false) => c.fp += 1,
                (StepLabel::Correct, true) => c.tn += 1,
            }
        }
        c
    }

    pub fn metrics<T: Scalar>(&self) -> (T, T, T) {
        let correct_recognized = T::ratio(self.tn, self.tn + self.fp);
        let incorrect_detected = T::ratio(self.tp, self.tp + self.fn_);
        let f1 = T::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        (correct_recognized, incorrect_detected, f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationMetrics<T> {
    pub confusion: Confusion,
    /// Share of correct actions allowed to proceed.
    pub correct_recognized: T,
    /// Share of incorrect actions flagged.
    pub incorrect_detected: T,
    /// F1 with flagged-incorrect as the positive class.
    pub f1: T,
    /// Share of loop-labeled steps flagged; `None` without loop labels.
    pub repetition_detection_rate: Option<T>,
    pub scored: usize,
    pub skipped: usize,
}

/// `proceed[i]` is `None` for skipped steps, which are left out of every count.
pub fn score<T: Scalar>(
    proceed: &[Option<bool>],
    labels: &[StepLabel],
    loop_labels: Option<&[bool]>,
) -> Result<VerificationMetrics<T>, VerifyError> {
    if labels.is_empty() {
        return Err(VerifyError::NoLabels);
    }
    if proceed.len() != labels.len() {
        return Err(VerifyError::Misaligned {
            verdicts: proceed.len(),
            labels: labels.len(),
        });
    }
    if let Some(l) = loop_labels {
        if l.len() != labels.len() {
            return Err(VerifyError::Misaligned {
                verdicts: proceed.len(),
                labels: l.len(),
            });
        }
    }
    let confusion = Confusion::from_outcomes(
        proceed
            .iter()
            .zip(labels)
            .filter_map(|(p, l)| p.map(|p| (p, *l))),
    );
    let (correct_recognized, incorrect_detected, f1) = confusion.metrics::<T>();
    let repetition_detection_rate = loop_labels.and_then(|loops| {
        let flags: Vec<bool> = proceed
            .iter()
            .zip(loops)
            .filter(|(_, &in_loop)| in_loop)
            .filter_map(|(p, _)| p.map(|p| !p))
            .collect();
        (!flags.is_empty()).then(|| {
            T::ratio(
                flags.iter().filter(|&&f| f).count() as u64,
                flags.len() as u64,
            )
        })
    });
    let scored = proceed.iter().filter(|p| p.is_some()).count();
    Ok(VerificationMetrics {
        confusion,
        correct_recognized,
        incorrect_detected,
        f1,
        repetition_detection_rate,
        scored,
        skipped: proceed.len() - scored,
    })
}

/// Pools every labeled trajectory into one score.
pub fn score_trajectories<T: Scalar>(
    trajs: &[Trajectory],
    verdicts: &[Vec<StepVerdict>],
) -> Result<VerificationMetrics<T>, VerifyError> {
    let mut proceed = Vec::new();
    let mut labels = Vec::new();
    let mut loops = Vec::new();
    let all_have_loops = trajs.iter().all(|t| t.loop_labels.is_some());
    for (t, v) in trajs.iter().zip(verdicts) {
        let Some(l) = &t.labels else { continue };
        if l.len() != v.len() {
            return Err(VerifyError::Misaligned {
                verdicts: v.len(),
                labels: l.len(),
            });
        }
        labels.extend_from_slice(l);
        proceed.extend(v.iter().map(StepVerdict::proceed));
        if let Some(ll) = &t.loop_labels {
            loops.extend_from_slice(ll);
        }
    }
    score(
        &proceed,
        &labels,
        all_have_loops.then_some(loops.as_slice()),
    )
}

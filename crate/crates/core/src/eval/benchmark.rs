//! Benchmark records, screenshot access and prediction files.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{PointPx, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Web,
    Mobile,
    Os,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Web => "web",
            Domain::Mobile => "mobile",
            Domain::Os => "os",
        })
    }
}

/// One target point with its reference point on the same screenshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    /// Screenshot path relative to the manifest directory.
    pub screenshot: String,
    /// `[W, H]`; read from the image header when omitted in the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen: Option<[u32; 2]>,
    pub point: PointPx,
    pub region: Rect,
    pub ref_point: PointPx,
    pub ref_region: Rect,
    pub content: String,
    pub domain: Domain,
}

impl BenchmarkSample {
    pub fn screen_size(&self) -> Option<(u32, u32)> {
        self.screen.map(|[w, h]| (w, h))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleIssue {
    /// 1-based manifest line, when loaded from a file.
    pub line: Option<usize>,
    pub id: String,
    pub problem: String,
}

impl fmt::Display for SampleIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l} ({}): {}", self.id, self.problem),
            None => write!(f, "{}: {}", self.id, self.problem),
        }
    }
}

/// Containment and non-overlap checks that every sample must pass.
pub fn sample_problems(s: &BenchmarkSample) -> Vec<String> {
    let mut out = Vec::new();
    if !s.region.contains(s.point) {
        out.push(format!("point {} is outside region {}", s.point, s.region));
    }
    if !s.ref_region.contains(s.ref_point) {
        out.push(format!(
            "reference point {} is outside reference region {}",
            s.ref_point, s.ref_region
        ));
    }
    if s.region.intersection(&s.ref_region).is_some() {
        out.push(format!(
            "region {} overlaps reference region {}",
            s.region, s.ref_region
        ));
    }
    if let Some([w, h]) = s.screen {
        let screen = Rect::new(0, 0, i64::from(w), i64::from(h));
        match screen {
            Ok(screen)
                if screen.contains_rect(&s.region) && screen.contains_rect(&s.ref_region) => {}
            _ => out.push(format!("regions exceed the {w}x{h} screen")),
        }
    }
    out
}

pub fn validate_samples(samples: &[BenchmarkSample]) -> Vec<SampleIssue> {
    let mut seen = HashMap::new();
    let mut issues = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for problem in sample_problems(s) {
            issues.push(SampleIssue {
                line: None,
                id: s.id.clone(),
                problem,
            });
        }
        if let Some(prev) = seen.insert(s.id.clone(), i) {
            issues.push(SampleIssue {
                line: None,
                id: s.id.clone(),
                problem: format!("duplicate id (first at sample {})", prev + 1),
            });
        }
    }
    issues
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub root: PathBuf,
    pub samples: Vec<BenchmarkSample>,
}

/// Reads a JSONL manifest; screenshots resolve relative to its directory.
pub fn load_benchmark(manifest_path: &Path) -> Result<Benchmark, EvalError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|source| EvalError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let root = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let mut samples = Vec::new();
    let mut issues = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let mut sample: BenchmarkSample = match serde_json::from_str(line) {
            Ok(s) => s,
            Err(e) => {
                issues.push(SampleIssue {
                    line: Some(line_no),
                    id: "?".into(),
                    problem: e.to_string(),
                });
                continue;
            }
        };
        let image_path = root.join(&sample.screenshot);
        if sample.screen.is_none() {
            match image::image_dimensions(&image_path) {
                Ok((w, h)) => sample.screen = Some([w, h]),
                Err(e) => issues.push(SampleIssue {
                    line: Some(line_no),
                    id: sample.id.clone(),
                    problem: format!("cannot read screenshot {}: {e}", image_path.display()),
                }),
            }
        } else if !image_path.is_file() {
            issues.push(SampleIssue {
                line: Some(line_no),
                id: sample.id.clone(),
                problem: format!("missing screenshot {}", image_path.display()),
            });
        }
        for problem in sample_problems(&sample) {
            issues.push(SampleIssue {
                line: Some(line_no),
                id: sample.id.clone(),
                problem,
            });
        }
        if seen.insert(sample.id.clone(), line_no).is_some() {
            issues.push(SampleIssue {
                line: Some(line_no),
                id: sample.id.clone(),
                problem: "duplicate id".into(),
            });
        }
        samples.push(sample);
    }
    if !issues.is_empty() {
        return Err(EvalError::InvalidBenchmark(issues));
    }
    Ok(Benchmark { root, samples })
}

/// Resolves screenshot references to decoded images.
pub trait ScreenshotSource: Send + Sync {
    fn load(&self, reference: &str) -> Result<Arc<RgbImage>, EvalError>;
}

/// Loads from a directory, caching decoded images.
pub struct DirSource {
    root: PathBuf,
    cache: Mutex<HashMap<String, Arc<RgbImage>>>,
}

impl DirSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl ScreenshotSource for DirSource {
    fn load(&self, reference: &str) -> Result<Arc<RgbImage>, EvalError> {
        if let Some(img) = self
            .cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(reference)
        {
            return Ok(img.clone());
        }
        let path = self.root.join(reference);
        let img = image::open(&path)
            .map_err(|e| EvalError::Image {
                reference: path.display().to_string(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let img = Arc::new(img);
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(reference.to_string(), img.clone());
        Ok(img)
    }
}

#[derive(Default, Clone)]
pub struct MemorySource {
    images: HashMap<String, Arc<RgbImage>>,
}

impl MemorySource {
    pub fn insert(&mut self, reference: impl Into<String>, img: RgbImage) {
        self.images.insert(reference.into(), Arc::new(img));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arc<RgbImage>)> {
        self.images.iter()
    }
}

impl ScreenshotSource for MemorySource {
    fn load(&self, reference: &str) -> Result<Arc<RgbImage>, EvalError> {
        self.images
            .get(reference)
            .cloned()
            .ok_or_else(|| EvalError::Image {
                reference: reference.to_string(),
                message: "not in memory source".into(),
            })
    }
}

/// A screen reader's output for one sample and its reference point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub content: String,
    pub layout: String,
    #[serde(default)]
    pub reference_layout: String,
}

/// Accepts a JSON array or JSONL of [`Prediction`]s.
pub fn parse_predictions(text: &str) -> Result<HashMap<String, Prediction>, serde_json::Error> {
    let list: Vec<Prediction> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text)?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?
    };
    Ok(list.into_iter().map(|p| (p.id.clone(), p)).collect())
}

pub fn load_predictions(path: &Path) -> Result<HashMap<String, Prediction>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_predictions(&text).map_err(|source| EvalError::Json {
        path: path.to_path_buf(),
        source,
    })
}

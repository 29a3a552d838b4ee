//! Multi-lens prompting: build the text prompt, send both lenses to a
//! chat-vision model and split the `(1) … (2) …` reply into content and
//! layout descriptions.

mod client;
mod http;
mod mock;

use std::sync::OnceLock;

use image::RgbImage;
use regex::Regex;
use serde::{Deserialize, Serialize};

pub use client::{
    request_digest, send_with_retries, ChatClient, ChatRequest, ClientError, ModelParams,
    RetryError,
};
pub use http::{parse_response, request_body, HttpBackendConfig, HttpClient, RateLimiter};
pub use mock::{EchoClient, FixtureClient, ScriptedClient};

use crate::geometry::{to_norm, PointNorm, PointPx};
use crate::hierarchy::{build_tree, HierarchicalLayoutTree, ScoredRegion, TreeConfig, TreeError};
use crate::lens::{
    encode_png, render_lenses, select_target_path, LensSet, LensStyle, PathError, RenderError,
    StyleOverrides, TargetPath,
};

const TOL_PROMPT: &str = "You are a smart screen reader that outputs concise natural language to answer questions from users based on the area (box 1) pointed out by the user shown as a red dot on the screen. The red dot is inside the box 1 in the first image, at (x,y) = ({{x}},{{y}}), where x and y are the normalized coordinates.

Note: box 1 is the box with label 1 and box 2 is the box with label 2, box 1 is located inside box 2
Note: the first image shows the box 1 from the view of box 2, and the second image shows the box 2 from the complete screen.
Note: if the user asks about the location, based on the layout, explain where box 1 is in box 2 and then explain where box 2 is in the overall screen.
Note: don't mention box 1, box 2 or the red dot in the output.

User question: (1) what is this? (2) where it is located in the screen?
Your output should in format (1) … (2) …";

/// The screen-reader prompt with the point's normalized coordinates at two decimals.
pub fn build_tol_prompt(p: PointNorm) -> String {
    TOL_PROMPT
        .replace("{{x}}", &format!("{:.2}", p.x))
        .replace("{{y}}", &format!("{:.2}", p.y))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionDescription {
    pub content: String,
    pub layout: String,
    pub raw: String,
    pub parse_ok: bool,
}

fn marker(n: u8) -> &'static Regex {
    static ONE: OnceLock<Regex> = OnceLock::new();
    static TWO: OnceLock<Regex> = OnceLock::new();
    let cell = if n == 1 { &ONE } else { &TWO };
    cell.get_or_init(|| Regex::new(&format!(r"\(\s*{n}\s*\)")).expect("static regex"))
}

/// Splits a reply at the first `(1)` and the first `(2)` after it. When
/// either marker or either part is missing the whole reply becomes the
/// content and `parse_ok` is false.
pub fn parse_reply(raw: &str) -> RegionDescription {
    let split = marker(1).find(raw).and_then(|one| {
        let rest = &raw[one.end()..];
        marker(2).find(rest).map(|two| {
            (
                rest[..two.start()].trim().to_string(),
                rest[two.end()..].trim().to_string(),
            )
        })
    });
    match split {
        Some((content, layout)) if !content.is_empty() && !layout.is_empty() => RegionDescription {
            content,
            layout,
            raw: raw.to_string(),
            parse_ok: true,
        },
        _ => RegionDescription {
            content: raw.to_string(),
            layout: String::new(),
            raw: raw.to_string(),
            parse_ok: false,
        },
    }
}

pub fn format_reply(content: &str, layout: &str) -> String {
    format!("(1) {content} (2) {layout}")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DescribeConfig {
    /// Downscale lenses so their longer side is at most this many pixels
    /// before sending. `None` sends full resolution.
    pub max_side: Option<u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum DescribeError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Upstream(#[from] RetryError),
}

fn prepare(img: &RgbImage, max_side: Option<u32>) -> Result<Vec<u8>, RenderError> {
    match max_side {
        Some(limit) if img.width().max(img.height()) > limit && limit > 0 => {
            let scale = f64::from(limit) / f64::from(img.width().max(img.height()));
            let w = ((f64::from(img.width()) * scale).round() as u32).max(1);
            let h = ((f64::from(img.height()) * scale).round() as u32).max(1);
            encode_png(&image::imageops::resize(
                img,
                w,
                h,
                image::imageops::FilterType::Triangle,
            ))
        }
        _ => encode_png(img),
    }
}

/// Sends `[lens1, lens2]` and the prompt for `p`, then parses the reply.
pub fn describe(
    lenses: &LensSet,
    p: PointNorm,
    client: &dyn ChatClient,
    params: &ModelParams,
    cfg: &DescribeConfig,
) -> Result<RegionDescription, DescribeError> {
    let images = vec![
        prepare(&lenses.lens1, cfg.max_side)?,
        prepare(&lenses.lens2, cfg.max_side)?,
    ];
    let text = build_tol_prompt(p);
    let raw = send_with_retries(
        client,
        &ChatRequest {
            images: &images,
            text: &text,
            params,
        },
    )?;
    Ok(parse_reply(&raw))
}

/// Input regions for [`describe_point`].
#[derive(Debug, Clone, Copy)]
pub enum Regions<'a> {
    Detections(&'a [ScoredRegion]),
    Tree(&'a HierarchicalLayoutTree),
}

/// Everything needed to reproduce and audit a point reading.
#[derive(Debug, Clone)]
pub struct PointReading {
    pub point: PointPx,
    pub point_norm: PointNorm,
    pub path: TargetPath,
    pub lenses: LensSet,
    pub description: RegionDescription,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tree,
    Path,
    Render,
    Describe,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("tree stage: {0}")]
    Tree(#[from] TreeError),
    #[error("path stage: {0}")]
    Path(#[from] PathError),
    #[error("render stage: {0}")]
    Render(RenderError),
    #[error("describe stage: {0}")]
    Describe(RetryError),
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            Self::Tree(_) => Stage::Tree,
            Self::Path(_) => Stage::Path,
            Self::Render(_) => Stage::Render,
            Self::Describe(_) => Stage::Describe,
        }
    }
}

impl From<DescribeError> for PipelineError {
    fn from(e: DescribeError) -> Self {
        match e {
            DescribeError::Render(r) => Self::Render(r),
            DescribeError::Upstream(u) => Self::Describe(u),
        }
    }
}

/// Settings shared by every stage of a point reading.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReaderConfig {
    pub tree: TreeConfig,
    pub style: StyleOverrides,
    pub params: ModelParams,
    pub describe: DescribeConfig,
}

impl ReaderConfig {
    pub fn style_for(&self, img: &RgbImage) -> LensStyle {
        self.style.resolve(img.width(), img.height())
    }
}

/// Renders and describes an already selected path.
pub fn read_path(
    screenshot: &RgbImage,
    path: TargetPath,
    client: &dyn ChatClient,
    cfg: &ReaderConfig,
) -> Result<PointReading, PipelineError> {
    let lenses = render_lenses(screenshot, &path, &cfg.style_for(screenshot))
        .map_err(PipelineError::Render)?;
    let point_norm =
        to_norm(path.point, screenshot.width(), screenshot.height()).map_err(|_| {
            PipelineError::Path(PathError::OutsideScreen {
                point: path.point,
                screen: path.global,
            })
        })?;
    let description = describe(&lenses, point_norm, client, &cfg.params, &cfg.describe)?;
    Ok(PointReading {
        point: path.point,
        point_norm,
        path,
        lenses,
        description,
    })
}

/// Tree (if needed) → target path → lenses → description.
pub fn describe_point(
    screenshot: &RgbImage,
    regions: Regions<'_>,
    p: PointPx,
    client: &dyn ChatClient,
    cfg: &ReaderConfig,
) -> Result<PointReading, PipelineError> {
    let built;
    let tree = match regions {
        Regions::Tree(t) => t,
        Regions::Detections(d) => {
            let screen = crate::geometry::Rect::screen(screenshot.width(), screenshot.height())
                .map_err(|_| PipelineError::Tree(TreeError::EmptyScreen))?;
            built = build_tree(screen, d, &cfg.tree)?;
            &built
        }
    };
    let path = select_target_path(tree, p)?;
    read_path(screenshot, path, client, cfg)
}

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use super::font::{self, GLYPH_H, GLYPH_W};
use super::TargetPath;
use crate::geometry::{PointPx, Rect};

pub type Rgb = [u8; 3];

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("global region {global} does not overlap the {width}x{height} screenshot")]
    DegenerateCrop {
        global: Rect,
        width: u32,
        height: u32,
    },
    #[error("dot alpha must lie strictly between 0 and 1, got {0}")]
    BadAlpha(f64),
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensStyle {
    pub box1_color: Rgb,
    pub box2_color: Rgb,
    pub dot_color: Rgb,
    pub line_width_px: u32,
    pub dot_radius_px: u32,
    pub dot_alpha: f64,
    pub label_height_px: u32,
}

/// Per-field replacements for the screen-scaled defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleOverrides {
    pub box1_color: Option<Rgb>,
    pub box2_color: Option<Rgb>,
    pub dot_color: Option<Rgb>,
    pub line_width_px: Option<u32>,
    pub dot_radius_px: Option<u32>,
    pub dot_alpha: Option<f64>,
    pub label_height_px: Option<u32>,
}

impl StyleOverrides {
    pub fn resolve(&self, width: u32, height: u32) -> LensStyle {
        let base = LensStyle::for_screen(width, height);
        LensStyle {
            box1_color: self.box1_color.unwrap_or(base.box1_color),
            box2_color: self.box2_color.unwrap_or(base.box2_color),
            dot_color: self.dot_color.unwrap_or(base.dot_color),
            line_width_px: self.line_width_px.unwrap_or(base.line_width_px),
            dot_radius_px: self.dot_radius_px.unwrap_or(base.dot_radius_px),
            dot_alpha: self.dot_alpha.unwrap_or(base.dot_alpha),
            label_height_px: self.label_height_px.unwrap_or(base.label_height_px),
        }
    }
}

impl LensStyle {
    /// Defaults scaled to the screenshot: the dot radius is 1.5% of the
    /// shorter side.
    pub fn for_screen(width: u32, height: u32) -> Self {
        let short = f64::from(width.min(height));
        Self {
            box1_color: [255, 140, 0],
            box2_color: [0, 90, 255],
            dot_color: [255, 0, 0],
            line_width_px: 4,
            dot_radius_px: ((short * 0.015).round() as u32).max(1),
            dot_alpha: 0.5,
            label_height_px: ((short * 0.03).round() as u32).max(12),
        }
    }
}

/// Where each annotation landed, in the coordinates of its lens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensLayout {
    /// Global region crop in screenshot coordinates.
    pub crop: Rect,
    pub local_box: Option<Rect>,
    pub label1: Option<Rect>,
    pub dot_center: PointPx,
    pub dot_radius: u32,
    pub global_box: Rect,
    pub label2: Option<Rect>,
    pub line_width: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensSet {
    pub lens1: RgbImage,
    pub lens2: RgbImage,
    pub layout: LensLayout,
}

impl LensSet {
    pub fn to_png(&self) -> Result<[Vec<u8>; 2], RenderError> {
        Ok([encode_png(&self.lens1)?, encode_png(&self.lens2)?])
    }

    /// Writes `lens1.png` and `lens2.png` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), RenderError> {
        let io = |path: std::path::PathBuf| move |source| RenderError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let [a, b] = self.to_png()?;
        std::fs::write(dir.join("lens1.png"), a).map_err(io(dir.join("lens1.png")))?;
        std::fs::write(dir.join("lens2.png"), b).map_err(io(dir.join("lens2.png")))?;
        Ok(())
    }
}

/// PNG with fixed encoder settings so identical pixels give identical bytes.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(
        Cursor::new(&mut out),
        CompressionType::Default,
        FilterType::Adaptive,
    )
    .write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

fn image_rect(img: &RgbImage) -> Option<Rect> {
    Rect::new(0, 0, i64::from(img.width()), i64::from(img.height())).ok()
}

/// Copies the part of `img` under `rect`; `None` when they do not overlap.
pub fn crop(img: &RgbImage, rect: &Rect) -> Option<RgbImage> {
    let r = rect.clip_to(&image_rect(img)?)?;
    Some(image::imageops::crop_imm(img, r.x as u32, r.y as u32, r.w as u32, r.h as u32).to_image())
}

fn fill(img: &mut RgbImage, rect: &Rect, color: Rgb) {
    let Some(r) = image_rect(img).and_then(|b| rect.clip_to(&b)) else {
        return;
    };
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    }
}

/// Outline drawn inward from the rect's edges.
fn stroke(img: &mut RgbImage, rect: &Rect, width: u32, color: Rgb) {
    let w = i64::from(width).max(1);
    let bands = [
        Rect::from_edges(
            rect.x,
            rect.y,
            rect.right(),
            (rect.y + w).min(rect.bottom()),
        ),
        Rect::from_edges(
            rect.x,
            (rect.bottom() - w).max(rect.y),
            rect.right(),
            rect.bottom(),
        ),
        Rect::from_edges(
            rect.x,
            rect.y,
            (rect.x + w).min(rect.right()),
            rect.bottom(),
        ),
        Rect::from_edges(
            (rect.right() - w).max(rect.x),
            rect.y,
            rect.right(),
            rect.bottom(),
        ),
    ];
    for band in bands.into_iter().flatten() {
        fill(img, &band, color);
    }
}

/// Places the label above the box's top-left corner, or just inside the
/// box when there is no room above; always kept within the image.
fn label_rect(img: &RgbImage, anchor: &Rect, text: &str, height: u32) -> Option<Rect> {
    let bounds = image_rect(img)?;
    let h = i64::from(height).min(bounds.h);
    let (scale, pad) = glyph_metrics(height);
    let w = (text.chars().count() as i64 * i64::from(GLYPH_W * scale + scale) + 2 * pad)
        .max(h)
        .min(bounds.w);
    let above = anchor.y - h;
    let y = if above >= 0 {
        above
    } else {
        anchor.y.clamp(0, bounds.h - h)
    };
    let x = anchor.x.clamp(0, bounds.w - w);
    Rect::new(x, y, w, h).ok()
}

fn glyph_metrics(height: u32) -> (u32, i64) {
    let pad = (height / 6).max(1);
    let scale = (height.saturating_sub(2 * pad) / GLYPH_H).max(1);
    (scale, i64::from(pad))
}

fn draw_label(img: &mut RgbImage, rect: &Rect, text: &str, color: Rgb) {
    fill(img, rect, color);
    let (scale, _) = glyph_metrics(rect.h as u32);
    let text_w =
        text.chars().count() as i64 * i64::from(GLYPH_W * scale + scale) - i64::from(scale);
    let mut x0 = rect.x + (rect.w - text_w).max(0) / 2;
    let y0 = rect.y + (rect.h - i64::from(GLYPH_H * scale)).max(0) / 2;
    let ink_color = contrast(color);
    for ch in text.chars() {
        for row in 0..GLYPH_H {
            for col in 0..GLYPH_W {
                if font::ink(ch, col, row) {
                    let cell = Rect {
                        x: x0 + i64::from(col * scale),
                        y: y0 + i64::from(row * scale),
                        w: i64::from(scale),
                        h: i64::from(scale),
                    };
                    if let Some(c) = cell.clip_to(rect) {
                        fill(img, &c, ink_color);
                    }
                }
            }
        }
        x0 += i64::from(GLYPH_W * scale + scale);
    }
}

fn contrast(color: Rgb) -> Rgb {
    let luma = 299 * u32::from(color[0]) + 587 * u32::from(color[1]) + 114 * u32::from(color[2]);
    if luma > 150_000 {
        [0, 0, 0]
    } else {
        [255, 255, 255]
    }
}

/// `alpha * fg + (1 - alpha) * bg`, rounded per channel.
pub(crate) fn blend(fg: Rgb, bg: Rgb, alpha: f64) -> Rgb {
    let mix = |f: u8, b: u8| (alpha * f64::from(f) + (1.0 - alpha) * f64::from(b)).round() as u8;
    [mix(fg[0], bg[0]), mix(fg[1], bg[1]), mix(fg[2], bg[2])]
}

fn draw_dot(img: &mut RgbImage, center: PointPx, radius: u32, color: Rgb, alpha: f64) {
    let r = i64::from(radius);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (x, y) = (center.x + dx, center.y + dy);
            if x < 0 || y < 0 || x >= i64::from(img.width()) || y >= i64::from(img.height()) {
                continue;
            }
            let px = img.get_pixel_mut(x as u32, y as u32);
            px.0 = blend(color, px.0, alpha);
        }
    }
}

/// Renders both lenses for `path`. The output depends only on the inputs.
pub fn render_lenses(
    screenshot: &RgbImage,
    path: &TargetPath,
    style: &LensStyle,
) -> Result<LensSet, RenderError> {
    if !(style.dot_alpha > 0.0 && style.dot_alpha < 1.0) {
        return Err(RenderError::BadAlpha(style.dot_alpha));
    }
    let degenerate = || RenderError::DegenerateCrop {
        global: path.global,
        width: screenshot.width(),
        height: screenshot.height(),
    };
    let bounds = image_rect(screenshot).ok_or_else(degenerate)?;
    let crop_rect = path.global.clip_to(&bounds).ok_or_else(degenerate)?;
    let mut lens1 = crop(screenshot, &crop_rect).ok_or_else(degenerate)?;

    let local_box = Rect {
        x: path.local.x - crop_rect.x,
        y: path.local.y - crop_rect.y,
        ..path.local
    }
    .clip_to(&image_rect(&lens1).ok_or_else(degenerate)?);
    let mut label1 = None;
    if let Some(b) = local_box {
        stroke(&mut lens1, &b, style.line_width_px, style.box1_color);
        label1 = label_rect(&lens1, &b, "1", style.label_height_px);
        if let Some(l) = label1 {
            draw_label(&mut lens1, &l, "1", style.box1_color);
        }
    }
    let dot_center = PointPx {
        x: path.point.x - crop_rect.x,
        y: path.point.y - crop_rect.y,
    };
    draw_dot(
        &mut lens1,
        dot_center,
        style.dot_radius_px,
        style.dot_color,
        style.dot_alpha,
    );

    let mut lens2 = screenshot.clone();
    stroke(
        &mut lens2,
        &crop_rect,
        style.line_width_px,
        style.box2_color,
    );
    let label2 = label_rect(&lens2, &crop_rect, "2", style.label_height_px);
    if let Some(l) = label2 {
        draw_label(&mut lens2, &l, "2", style.box2_color);
    }

    Ok(LensSet {
        lens1,
        lens2,
        layout: LensLayout {
            crop: crop_rect,
            local_box,
            label1,
            dot_center,
            dot_radius: style.dot_radius_px,
            global_box: crop_rect,
            label2,
            line_width: style.line_width_px,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lens::Provenance;

    fn solid(w: u32, h: u32, c: Rgb) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb(c))
    }

    fn path(local: Rect, global: Rect, point: PointPx) -> TargetPath {
        TargetPath {
            point,
            local,
            global,
            provenance: Provenance::Normal,
            local_node: None,
            global_node: None,
            fallback: false,
        }
    }

    fn r(x: i64, y: i64, w: i64, h: i64) -> Rect {
        Rect::new(x, y, w, h).unwrap()
    }

    #[test]
    fn full_screen_global_keeps_dimensions() {
        let img = solid(120, 80, [200, 200, 200]);
        let screen = r(0, 0, 120, 80);
        let set = render_lenses(
            &img,
            &path(r(10, 20, 30, 30), screen, PointPx { x: 20, y: 30 }),
            &LensStyle::for_screen(120, 80),
        )
        .unwrap();
        assert_eq!(set.lens1.dimensions(), set.lens2.dimensions());
    }

    #[test]
    fn lens1_matches_global_dims() {
        let img = solid(200, 100, [10, 10, 10]);
        let set = render_lenses(
            &img,
            &path(
                r(60, 30, 20, 20),
                r(50, 20, 100, 60),
                PointPx { x: 70, y: 40 },
            ),
            &LensStyle::for_screen(200, 100),
        )
        .unwrap();
        assert_eq!(set.lens1.dimensions(), (100, 60));
        assert_eq!(set.lens2.dimensions(), (200, 100));
        assert_eq!(set.layout.local_box, Some(r(10, 10, 20, 20)));
        assert_eq!(set.layout.dot_center, PointPx { x: 20, y: 20 });
    }

    #[test]
    fn dot_center_is_half_blend() {
        let bg = [100, 150, 200];
        let img = solid(400, 400, bg);
        let set = render_lenses(
            &img,
            &path(
                r(100, 100, 200, 200),
                r(0, 0, 400, 400),
                PointPx { x: 200, y: 200 },
            ),
            &LensStyle::for_screen(400, 400),
        )
        .unwrap();
        let px = set.lens1.get_pixel(200, 200).0;
        let expect = [0.5 * 255.0 + 0.5 * 100.0, 0.5 * 150.0, 0.5 * 200.0];
        for c in 0..3 {
            assert!((f64::from(px[c]) - expect[c]).abs() <= 1.0, "{px:?}");
        }
    }

    #[test]
    fn labels_flip_inside_at_top_border() {
        let img = solid(300, 300, [0, 0, 0]);
        let set = render_lenses(
            &img,
            &path(r(0, 0, 50, 50), r(0, 0, 300, 300), PointPx { x: 10, y: 10 }),
            &LensStyle::for_screen(300, 300),
        )
        .unwrap();
        let l1 = set.layout.label1.unwrap();
        assert_eq!((l1.x, l1.y), (0, 0));
        let set = render_lenses(
            &img,
            &path(
                r(100, 100, 50, 50),
                r(0, 0, 300, 300),
                PointPx { x: 110, y: 110 },
            ),
            &LensStyle::for_screen(300, 300),
        )
        .unwrap();
        let l1 = set.layout.label1.unwrap();
        assert_eq!(l1.bottom(), 100);
    }

    #[test]
    fn degenerate_crop_and_bad_alpha() {
        let img = solid(10, 10, [0, 0, 0]);
        let off = path(r(0, 0, 2, 2), r(20, 20, 5, 5), PointPx { x: 0, y: 0 });
        assert!(matches!(
            render_lenses(&img, &off, &LensStyle::for_screen(10, 10)),
            Err(RenderError::DegenerateCrop { .. })
        ));
        let style = LensStyle {
            dot_alpha: 1.0,
            ..LensStyle::for_screen(10, 10)
        };
        let ok = path(r(0, 0, 2, 2), r(0, 0, 10, 10), PointPx { x: 0, y: 0 });
        assert!(matches!(
            render_lenses(&img, &ok, &style),
            Err(RenderError::BadAlpha(_))
        ));
    }

    #[test]
    fn png_roundtrip_and_determinism() {
        let mut img = solid(33, 17, [1, 2, 3]);
        img.put_pixel(5, 5, image::Rgb([250, 0, 9]));
        let a = encode_png(&img).unwrap();
        assert_eq!(a, encode_png(&img).unwrap());
        assert_eq!(decode_png(&a).unwrap(), img);
    }
}

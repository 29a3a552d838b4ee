//! Pixel-space geometry.
//!
//! Boxes are half-open: a [`Rect`] covers columns `x..x+w` and rows
//! `y..y+h`, and its area is `w * h`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("rectangle must have positive size, got {w}x{h}")]
    EmptyRect { w: i64, h: i64 },
    #[error("pixel coordinates must be non-negative, got ({x}, {y})")]
    NegativePoint { x: i64, y: i64 },
    #[error("normalized coordinates must lie in [0, 1], got ({x}, {y})")]
    PointOutOfUnit { x: f64, y: f64 },
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
}

/// A point in image pixels, origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 2]", into = "[i64; 2]")]
pub struct PointPx {
    pub x: i64,
    pub y: i64,
}

impl PointPx {
    pub fn new(x: i64, y: i64) -> Result<Self, GeometryError> {
        if x < 0 || y < 0 {
            return Err(GeometryError::NegativePoint { x, y });
        }
        Ok(Self { x, y })
    }
}

impl TryFrom<[i64; 2]> for PointPx {
    type Error = GeometryError;
    fn try_from([x, y]: [i64; 2]) -> Result<Self, Self::Error> {
        Self::new(x, y)
    }
}

impl From<PointPx> for [i64; 2] {
    fn from(p: PointPx) -> Self {
        [p.x, p.y]
    }
}

impl fmt::Display for PointPx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A point in normalized image coordinates, both axes in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct PointNorm {
    pub x: f64,
    pub y: f64,
}

impl PointNorm {
    pub fn new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(GeometryError::PointOutOfUnit { x, y });
        }
        Ok(Self { x, y })
    }
}

impl TryFrom<[f64; 2]> for PointNorm {
    type Error = GeometryError;
    fn try_from([x, y]: [f64; 2]) -> Result<Self, Self::Error> {
        Self::new(x, y)
    }
}

impl From<PointNorm> for [f64; 2] {
    fn from(p: PointNorm) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned pixel box. Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl TryFrom<[i64; 4]> for Rect {
    type Error = GeometryError;
    fn try_from([x, y, w, h]: [i64; 4]) -> Result<Self, Self::Error> {
        Self::new(x, y, w, h)
    }
}

impl From<Rect> for [i64; 4] {
    fn from(r: Rect) -> Self {
        [r.x, r.y, r.w, r.h]
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x, self.y, self.w, self.h)
    }
}

impl Rect {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Result<Self, GeometryError> {
        if w <= 0 || h <= 0 {
            return Err(GeometryError::EmptyRect { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a rect from edge coordinates; `None` when the span is empty.
    pub fn from_edges(left: i64, top: i64, right: i64, bottom: i64) -> Option<Self> {
        (right > left && bottom > top).then_some(Self {
            x: left,
            y: top,
            w: right - left,
            h: bottom - top,
        })
    }

    /// The full image as a rect anchored at the origin.
    pub fn screen(width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(0, 0, i64::from(width), i64::from(height))
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        (self.w as u64) * (self.h as u64)
    }

    pub fn contains(&self, p: PointPx) -> bool {
        contains(self, p)
    }

    /// Whether `other` lies entirely inside `self`.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        Rect::from_edges(
            self.x.max(other.x),
            self.y.max(other.y),
            self.right().min(other.right()),
            self.bottom().min(other.bottom()),
        )
    }

    pub fn intersection_area(&self, other: &Rect) -> u64 {
        self.intersection(other).map_or(0, |r| r.area())
    }

    /// Smallest rect covering both inputs.
    pub fn bounding_union(&self, other: &Rect) -> Rect {
        Rect {
            x: self.x.min(other.x),
            y: self.y.min(other.y),
            w: self.right().max(other.right()) - self.x.min(other.x),
            h: self.bottom().max(other.bottom()) - self.y.min(other.y),
        }
    }

    /// Grows the rect by `by` pixels on every side.
    pub fn expand(&self, by: i64) -> Rect {
        Rect {
            x: self.x - by,
            y: self.y - by,
            w: self.w + 2 * by,
            h: self.h + 2 * by,
        }
    }

    pub fn clip_to(&self, bounds: &Rect) -> Option<Rect> {
        self.intersection(bounds)
    }

    /// Center in pixel coordinates, rounded down.
    pub fn center(&self) -> PointPx {
        PointPx {
            x: self.x + self.w / 2,
            y: self.y + self.h / 2,
        }
    }

    /// Center times two, exact for integer rects.
    pub fn center_doubled(&self) -> (i64, i64) {
        (2 * self.x + self.w, 2 * self.y + self.h)
    }

    pub fn iou<T: Scalar>(&self, other: &Rect) -> T {
        iou(self, other)
    }
}

/// Intersection over union with pixel-area semantics.
pub fn iou<T: Scalar>(a: &Rect, b: &Rect) -> T {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    T::ratio(inter, union)
}

/// Half-open containment test.
pub fn contains(r: &Rect, p: PointPx) -> bool {
    r.x <= p.x && p.x < r.right() && r.y <= p.y && p.y < r.bottom()
}

/// Maps a normalized point onto the pixel grid, rounding halves down and
/// clamping into the image.
pub fn to_pixel(p: PointNorm, width: u32, height: u32) -> Result<PointPx, GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::EmptyImage { width, height });
    }
    let axis = |v: f64, n: u32| -> i64 {
        let scaled = v * f64::from(n);
        ((scaled - 0.5).ceil() as i64).clamp(0, i64::from(n) - 1)
    };
    Ok(PointPx {
        x: axis(p.x, width),
        y: axis(p.y, height),
    })
}

pub fn to_norm(p: PointPx, width: u32, height: u32) -> Result<PointNorm, GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::EmptyImage { width, height });
    }
    PointNorm::new(
        (p.x as f64 / f64::from(width)).min(1.0),
        (p.y as f64 / f64::from(height)).min(1.0),
    )
}

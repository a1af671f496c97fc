//! Pixel geometry shared by the action DSL, rewards and evaluation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute pixel coordinate on the source screenshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Euclidean distance in pixels.
    pub fn distance(&self, other: &Point) -> f64 {
        let dx = f64::from(self.x) - f64::from(other.x);
        let dy = f64::from(self.y) - f64::from(other.y);
        dx.hypot(dy)
    }

    pub fn within(&self, screen: ScreenSize) -> bool {
        self.x < screen.width && self.y < screen.height
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("screen size must be positive, got {width}x{height}")]
    EmptyScreen { width: u32, height: u32 },
    #[error("malformed box [{x1}, {y1}, {x2}, {y2}]: corners out of order")]
    InvertedBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box coordinates must be finite")]
    NonFiniteBox,
}

/// Screenshot dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawScreen")]
pub struct ScreenSize {
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawScreen {
    width: u32,
    height: u32,
}

impl TryFrom<RawScreen> for ScreenSize {
    type Error = GeometryError;

    fn try_from(raw: RawScreen) -> Result<Self, Self::Error> {
        ScreenSize::new(raw.width, raw.height)
    }
}

impl ScreenSize {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyScreen { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Axis-aligned box `[x1, y1, x2, y2]` in pixels, inclusive on all edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteBox);
        }
        if x1 > x2 || y1 > y2 {
            return Err(GeometryError::InvertedBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Inclusive containment: `x1 <= x <= x2 && y1 <= y <= y2`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x1 <= x && x <= self.x2 && self.y1 <= y && y <= self.y2
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// The grounding predicate: does the center of `pred` fall inside `gt`?
///
/// Used by both the grounding reward and the grounding benchmark so the two
/// can never disagree. `pred` does not need to be well-ordered.
pub fn center_in_box(pred: [f64; 4], gt: &BBox) -> bool {
    let xc = (pred[0] + pred[2]) / 2.0;
    let yc = (pred[1] + pred[3]) / 2.0;
    gt.contains(xc, yc)
}

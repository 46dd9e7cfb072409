//! Axis-aligned boxes in normalized corner coordinates, plus the overlap and
//! regression measures used by matching costs and quality vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box coordinate {0} is not finite")]
    NonFinite(f64),
    #[error("box coordinate {0} lies outside [0, 1]")]
    OutOfRange(f64),
    #[error("box corners are inverted: ({x_min}, {y_min}) > ({x_max}, {y_max})")]
    Inverted {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
}

/// A rectangle `(x_min, y_min, x_max, y_max)` with all coordinates in `[0, 1]`.
///
/// Zero-area boxes are valid. Serialized as a flat array of four numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        for v in [x_min, y_min, x_max, y_max] {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(v));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(GeometryError::OutOfRange(v));
            }
        }
        if x_min > x_max || y_min > y_max {
            return Err(GeometryError::Inverted {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a valid box from two arbitrary corner points: each coordinate is
    /// clamped to `[0, 1]` and the corners are reordered per axis.
    ///
    /// Non-finite input collapses to 0.
    pub fn from_corners_clamped(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let c = |v: f64| {
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        };
        let (x0, y0, x1, y1) = (c(x0), c(y0), c(x1), c(y1));
        Self {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// `(cx, cy, w, h)`.
    pub fn center_format(&self) -> [f64; 4] {
        [
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
            self.width(),
            self.height(),
        ]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    fn intersection_area(&self, other: &Self) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    fn enclosing_area(&self, other: &Self) -> f64 {
        let w = self.x_max.max(other.x_max) - self.x_min.min(other.x_min);
        let h = self.y_max.max(other.y_max) - self.y_min.min(other.y_min);
        w * h
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union. Two boxes with zero union area have IoU 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let enclosing = a.enclosing_area(b);
    let overlap = if union <= 0.0 { 0.0 } else { inter / union };
    if enclosing <= 0.0 {
        return overlap;
    }
    overlap - (enclosing - union) / enclosing
}

/// Sum of absolute differences of `(cx, cy, w, h)`.
pub fn l1_box_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ca = a.center_format();
    let cb = b.center_format();
    ca.iter().zip(cb.iter()).map(|(x, y)| (x - y).abs()).sum()
}

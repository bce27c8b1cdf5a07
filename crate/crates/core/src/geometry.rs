//! Axis-aligned boxes and the overlap scores used throughout the pipeline.
//!
//! Boxes are stored in normalized center form `(cx, cy, w, h)`, the layout
//! DETR-style regression heads emit. Corner form is derived on demand.
//!
//! All three scores are total functions. Degenerate boxes (zero width or
//! height) have zero area; IoU of two degenerate boxes is 0, and the GIoU
//! and DIoU penalties are skipped when the enclosing box itself has zero
//! area or zero diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// `(x1, y1, x2, y2)` view of a [`BBox`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if w.is_nan() || w < 0.0 {
            return Err(Error::OutOfRange {
                field: "w",
                value: w,
                expected: "box width must be >= 0",
            });
        }
        if h.is_nan() || h < 0.0 {
            return Err(Error::OutOfRange {
                field: "h",
                value: h,
                expected: "box height must be >= 0",
            });
        }
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::OutOfRange {
                field: "box",
                value: f64::NAN,
                expected: "box parameters must be finite",
            });
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_corners(c: Corners) -> Result<Self> {
        if !(c.x1 <= c.x2 && c.y1 <= c.y2) {
            return Err(Error::InvalidCorners {
                x1: c.x1,
                y1: c.y1,
                x2: c.x2,
                y2: c.y2,
            });
        }
        Self::new((c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1)
    }

    /// Shorthand for `from_corners` taking the four coordinates directly.
    pub fn from_xyxy(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::from_corners(Corners { x1, y1, x2, y2 })
    }

    pub fn to_corners(&self) -> Corners {
        Corners {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Parameters as `[cx, cy, w, h]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection, union and enclosing-box quantities shared by the scores.
struct Overlap {
    inter: f64,
    union: f64,
    enclose_w: f64,
    enclose_h: f64,
}

fn overlap(a: &BBox, b: &BBox) -> Overlap {
    let ca = a.to_corners();
    let cb = b.to_corners();
    let iw = (ca.x2.min(cb.x2) - ca.x1.max(cb.x1)).max(0.0);
    let ih = (ca.y2.min(cb.y2) - ca.y1.max(cb.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Overlap {
        inter,
        union,
        enclose_w: ca.x2.max(cb.x2) - ca.x1.min(cb.x1),
        enclose_h: ca.y2.max(cb.y2) - ca.y1.min(cb.y1),
    }
}

impl Overlap {
    fn iou(&self) -> f64 {
        if self.union > 0.0 {
            (self.inter / self.union).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b && a.area() > 0.0 {
        return 1.0;
    }
    overlap(a, b).iou()
}

/// Generalized IoU: IoU minus the fraction of the enclosing box not covered
/// by the union.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    if a == b && a.area() > 0.0 {
        return 1.0;
    }
    let o = overlap(a, b);
    let enclose = o.enclose_w * o.enclose_h;
    if enclose > 0.0 {
        o.iou() - (enclose - o.union).max(0.0) / enclose
    } else {
        o.iou()
    }
}

/// Distance IoU: IoU minus squared center distance over the squared
/// diagonal of the enclosing box.
pub fn diou(a: &BBox, b: &BBox) -> f64 {
    if a == b && a.area() > 0.0 {
        return 1.0;
    }
    let o = overlap(a, b);
    let diag_sq = o.enclose_w * o.enclose_w + o.enclose_h * o.enclose_h;
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    if diag_sq > 0.0 {
        o.iou() - ((dx * dx + dy * dy) / diag_sq).min(1.0)
    } else {
        o.iou()
    }
}

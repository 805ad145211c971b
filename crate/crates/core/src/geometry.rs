//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! Boxes use the corner convention: `(x1, y1)` is the inclusive top-left
//! corner and `(x2, y2)` the exclusive bottom-right corner, so the area is
//! `(x2 - x1) * (y2 - y1)` with no `+1`. Zero-area boxes are legal.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and inverted corners.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {b:?}")));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox(format!("inverted corners in {b:?}")));
        }
        Ok(b)
    }

    /// COCO `[x, y, w, h]` to corners.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidBox(format!("negative size w={w} h={h}")));
        }
        BBox::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Overlap region, or `None` when the boxes do not intersect.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 <= x2 && y1 <= y2).then_some(BBox { x1, y1, x2, y2 })
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union. Zero when the union has zero area.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox { x1: self.x1 + dx, y1: self.y1 + dy, x2: self.x2 + dx, y2: self.y2 + dy }
    }

    pub fn scale(&self, s: f64) -> BBox {
        BBox { x1: self.x1 * s, y1: self.y1 * s, x2: self.x2 * s, y2: self.y2 * s }
    }

    /// Clamps the box into `[0, width] x [0, height]`. Returns the clamped
    /// box and whether any coordinate moved.
    pub fn clamp_to(&self, size: ImageSize) -> (BBox, bool) {
        let (w, h) = (size.width as f64, size.height as f64);
        let x1 = self.x1.clamp(0.0, w);
        let y1 = self.y1.clamp(0.0, h);
        let x2 = self.x2.clamp(x1, w);
        let y2 = self.y2.clamp(y1, h);
        let clamped = BBox { x1, y1, x2, y2 };
        (clamped, clamped != *self)
    }

    pub fn is_within(&self, size: ImageSize) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= size.width as f64 && self.y2 <= size.height as f64
    }
}

/// Free-function form of [`BBox::iou`].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImageSize { width, height });
        }
        Ok(ImageSize { width, height })
    }

    pub fn shortest_edge(&self) -> u32 {
        self.width.min(self.height)
    }

    pub fn longest_edge(&self) -> u32 {
        self.width.max(self.height)
    }
}

/// Geometric augmentations expressed on box coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeomTransform {
    HFlip,
    VFlip,
    /// Quarter turn clockwise; the output image is `height x width`.
    Rot90,
    /// Uniform rescale so the short edge becomes `target`, unless that would
    /// push the long edge past `max_size`.
    ResizeShortestEdge {
        target: u32,
        max_size: u32,
    },
}

impl GeomTransform {
    pub const fn resize_default() -> Self {
        GeomTransform::ResizeShortestEdge { target: 800, max_size: 1333 }
    }
}

/// Scale factor applied by [`GeomTransform::ResizeShortestEdge`].
pub fn resize_scale(size: ImageSize, target: u32, max_size: u32) -> f64 {
    let short = size.shortest_edge() as f64;
    let long = size.longest_edge() as f64;
    let mut s = target as f64 / short;
    if long * s > max_size as f64 {
        s = max_size as f64 / long;
    }
    s
}

/// Applies `t` to a box lying inside an image of size `size`.
pub fn transform_box(b: &BBox, t: GeomTransform, size: ImageSize) -> Result<(BBox, ImageSize)> {
    if !b.is_within(size) {
        return Err(Error::OutOfBounds { bbox: b.to_array(), width: size.width, height: size.height });
    }
    let (w, h) = (size.width as f64, size.height as f64);
    let out = match t {
        GeomTransform::HFlip => (BBox { x1: w - b.x2, y1: b.y1, x2: w - b.x1, y2: b.y2 }, size),
        GeomTransform::VFlip => (BBox { x1: b.x1, y1: h - b.y2, x2: b.x2, y2: h - b.y1 }, size),
        GeomTransform::Rot90 => (
            // (x, y) -> (h - y, x)
            BBox { x1: h - b.y2, y1: b.x1, x2: h - b.y1, y2: b.x2 },
            ImageSize { width: size.height, height: size.width },
        ),
        GeomTransform::ResizeShortestEdge { target, max_size } => {
            if target == 0 || max_size == 0 {
                return Err(Error::Config("resize target and max size must be positive".into()));
            }
            let s = resize_scale(size, target, max_size);
            let new_size =
                ImageSize { width: ((w * s).round() as u32).max(1), height: ((h * s).round() as u32).max(1) };
            // rounding the image size can leave the scaled box a hair outside
            (b.scale(s).clamp_to(new_size).0, new_size)
        }
    };
    Ok(out)
}

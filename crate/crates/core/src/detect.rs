//! Peak anchors and per-channel non-maximum suppression.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::tensor::{FeatureMap, Real};
use crate::{Error, Result};

/// Default anchor side in pixels for images with a 224-pixel short side.
pub const DEFAULT_BOX_SIDE: f64 = 100.0;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.1;
pub const DEFAULT_NMS_IOU: f64 = 0.3;

/// Axis-aligned box `(x1, y1, x2, y2)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    /// Square of side `side` centered on `(x, y)`.
    pub fn centered(x: f64, y: f64, side: f64) -> Self {
        let h = 0.5 * side;
        Self {
            x1: x - h,
            y1: y - h,
            x2: x + h,
            y2: y + h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::InvalidArgument(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn clip(&self, width: f64, height: f64) -> Self {
        Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }
}

/// A predicted part instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub channel: usize,
    /// Peak center in image pixels.
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub bbox: BBox,
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    Ok(inter / (a.area() + b.area() - inter))
}

/// Every strict 8-neighbourhood local maximum scoring at least
/// `score_threshold` in a non-background channel, sorted by descending
/// score (ties keep channel-then-cell order).
///
/// Cell `(r, c)` maps to pixel center `((c + 0.5) · W / w, (r + 0.5) · H / h)`;
/// boxes are squares of side `box_side` clipped to the image.
pub fn extract_peaks<T: Real>(
    part_map: &FeatureMap<T>,
    image_h: f64,
    image_w: f64,
    score_threshold: f64,
    box_side: f64,
) -> Result<Vec<Detection>> {
    if !(image_h > 0.0 && image_w > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "image size must be positive, got {image_w}x{image_h}"
        )));
    }
    if !(box_side > 0.0) {
        return Err(Error::InvalidArgument("box side must be positive".into()));
    }
    let (h, w, c) = part_map.shape();
    let (sy, sx) = (image_h / h as f64, image_w / w as f64);
    let mut out = Vec::new();
    for ch in 0..c.saturating_sub(1) {
        for r in 0..h {
            for q in 0..w {
                let v = part_map.get(r, q, ch).as_f64();
                if v < score_threshold || !is_strict_peak(part_map, r, q, ch, v) {
                    continue;
                }
                let (x, y) = ((q as f64 + 0.5) * sx, (r as f64 + 0.5) * sy);
                out.push(Detection {
                    channel: ch,
                    x,
                    y,
                    score: v,
                    bbox: BBox::centered(x, y, box_side).clip(image_w, image_h),
                });
            }
        }
    }
    sort_by_score(&mut out);
    Ok(out)
}

fn is_strict_peak<T: Real>(m: &FeatureMap<T>, r: usize, q: usize, ch: usize, v: f64) -> bool {
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (nr, nc) = (r as i64 + dr, q as i64 + dc);
            if nr < 0 || nc < 0 || nr >= m.height() as i64 || nc >= m.width() as i64 {
                continue;
            }
            if m.get(nr as usize, nc as usize, ch).as_f64() >= v {
                return false;
            }
        }
    }
    true
}

fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
}

/// Greedy per-channel NMS: visit detections by descending score (stable on
/// ties) and keep one iff its IoU with every kept detection of the same
/// channel is below `iou_threshold`. Output is sorted by descending score.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(Ordering::Equal));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let suppressed = kept.iter().any(|k| {
            k.channel == d.channel && iou(&k.bbox, &d.bbox).map_or(true, |v| v >= iou_threshold)
        });
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

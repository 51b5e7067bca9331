//! Detection and landmark metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detect::{iou, BBox, Detection};
use crate::linalg::ridge_least_squares;
use crate::math::sqrt;
use crate::tensor::{FeatureMap, Real};
use crate::{Error, Result};

/// Ridge damping used by [`LandmarkRegressor::fit`] by default.
pub const DEFAULT_RIDGE: f64 = 1e-4;

/// One ground-truth instance of a part: its center point and, when
/// annotated, its box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub x: f64,
    pub y: f64,
    pub bbox: Option<BBox>,
}

/// How a detection is matched to a ground truth instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchRule {
    /// Box IoU at least the threshold.
    Iou(f64),
    /// Center distance divided by `max(image_h, image_w)` below the
    /// threshold.
    L2(f64),
}

/// Detections and ground truth of one image, for one part.
#[derive(Debug, Clone, Copy)]
pub struct EvalImage<'a> {
    pub detections: &'a [Detection],
    pub truths: &'a [GroundTruth],
    pub image_h: f64,
    pub image_w: f64,
}

impl MatchRule {
    /// Match quality, higher is better, or `None` if the pair does not match.
    fn quality(&self, d: &Detection, g: &GroundTruth, image_h: f64, image_w: f64) -> Result<Option<f64>> {
        match *self {
            MatchRule::Iou(t) => {
                let Some(b) = g.bbox.as_ref() else {
                    return Err(Error::InvalidArgument(
                        "IoU matching needs ground-truth boxes".into(),
                    ));
                };
                let v = iou(&d.bbox, b)?;
                Ok((v >= t).then_some(v))
            }
            MatchRule::L2(t) => {
                let dist = sqrt((d.x - g.x) * (d.x - g.x) + (d.y - g.y) * (d.y - g.y));
                let v = dist / image_h.max(image_w);
                Ok((v < t).then_some(-v))
            }
        }
    }
}

/// Outcome of greedy matching: one true-positive flag per detection, in
/// descending score order, plus the ground truth count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    pub true_positive: Vec<bool>,
    pub n_truths: usize,
}

/// Greedy matching across images: detections in descending score order
/// (ties by image, then input order) each take the best still-unmatched
/// ground truth of their image that satisfies `rule`.
pub fn greedy_match(images: &[EvalImage<'_>], rule: MatchRule) -> Result<MatchOutcome> {
    let mut order: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| (0..im.detections.len()).map(move |k| (i, k)))
        .collect();
    order.sort_by(|a, b| {
        let sa = images[a.0].detections[a.1].score;
        let sb = images[b.0].detections[b.1].score;
        sb.partial_cmp(&sa).unwrap_or(Ordering::Equal)
    });
    let mut taken: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.truths.len()]).collect();
    let mut true_positive = Vec::with_capacity(order.len());
    for (i, k) in order {
        let im = &images[i];
        let d = &im.detections[k];
        let mut best: Option<(usize, f64)> = None;
        for (g, truth) in im.truths.iter().enumerate() {
            if taken[i][g] {
                continue;
            }
            if let Some(q) = rule.quality(d, truth, im.image_h, im.image_w)? {
                if best.map_or(true, |(_, bq)| q > bq) {
                    best = Some((g, q));
                }
            }
        }
        if let Some((g, _)) = best {
            taken[i][g] = true;
        }
        true_positive.push(best.is_some());
    }
    Ok(MatchOutcome {
        true_positive,
        n_truths: images.iter().map(|im| im.truths.len()).sum(),
    })
}

/// Area under the all-point interpolated precision/recall curve.
///
/// Errors with [`Error::Insufficient`] when there is no ground truth, in
/// which case AP is undefined.
pub fn average_precision(images: &[EvalImage<'_>], rule: MatchRule) -> Result<f64> {
    let outcome = greedy_match(images, rule)?;
    ap_from_outcome(&outcome)
}

pub fn ap_from_outcome(outcome: &MatchOutcome) -> Result<f64> {
    if outcome.n_truths == 0 {
        return Err(Error::Insufficient("no ground truth instances".into()));
    }
    let n = outcome.n_truths as f64;
    let mut recall = Vec::with_capacity(outcome.true_positive.len());
    let mut precision = Vec::with_capacity(outcome.true_positive.len());
    let mut tp = 0usize;
    for (i, &hit) in outcome.true_positive.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // precision envelope from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Ok(ap)
}

/// Channel chosen for each named part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPartAssignment {
    pub parts: Vec<String>,
    pub channels: Vec<usize>,
    /// `table[part][channel]` AP on the assignment split; `None` where
    /// undefined.
    pub table: Vec<Vec<Option<f64>>>,
}

impl ChannelPartAssignment {
    pub fn channel_for(&self, part: &str) -> Option<usize> {
        self.parts.iter().position(|p| p == part).map(|i| self.channels[i])
    }
}

/// Each part takes its highest-AP channel (lowest index on ties; undefined
/// entries never win unless a whole row is undefined, then channel 0).
pub fn assign_channels(parts: &[String], table: Vec<Vec<Option<f64>>>) -> Result<ChannelPartAssignment> {
    if parts.is_empty() || table.len() != parts.len() || table.iter().any(|r| r.is_empty()) {
        return Err(Error::InvalidArgument(
            "assignment needs a non-empty AP row per part".into(),
        ));
    }
    let channels = table
        .iter()
        .map(|row| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (c, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    if *v > best.1 {
                        best = (c, *v);
                    }
                }
            }
            best.0
        })
        .collect();
    Ok(ChannelPartAssignment {
        parts: parts.to_vec(),
        channels,
        table,
    })
}

/// Per-channel argmax location of a part map as `(x, y)` normalized to
/// `[0, 1]` by the grid size, or `None` where the channel's maximum is below
/// `min_score`. Covers every channel, background included.
pub fn peak_coordinates<T: Real>(part_map: &FeatureMap<T>, min_score: f64) -> Vec<Option<(f64, f64)>> {
    let (h, w, c) = part_map.shape();
    (0..c)
        .map(|ch| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for cell in 0..h * w {
                let v = part_map.data()[cell * c + ch].as_f64();
                if v > best.1 {
                    best = (cell, v);
                }
            }
            (best.1 >= min_score).then(|| {
                let (r, q) = (best.0 / w, best.0 % w);
                ((q as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64)
            })
        })
        .collect()
}

/// Flattens peak coordinates to regressor features, filling missing
/// channels with `fill` (per-channel `(x, y)`).
pub fn peak_features(peaks: &[Option<(f64, f64)>], fill: &[(f64, f64)]) -> Result<Vec<f64>> {
    if peaks.len() != fill.len() {
        return Err(Error::Shape("fill values do not cover every channel".into()));
    }
    Ok(peaks
        .iter()
        .zip(fill)
        .flat_map(|(p, f)| {
            let (x, y) = p.unwrap_or(*f);
            [x, y]
        })
        .collect())
}

/// Per-channel mean peak location over the images where the channel fired;
/// channels that never fire get the grid center.
pub fn mean_peak_coordinates(all: &[Vec<Option<(f64, f64)>>]) -> Result<Vec<(f64, f64)>> {
    let Some(first) = all.first() else {
        return Err(Error::Insufficient("no images for peak statistics".into()));
    };
    let c = first.len();
    if all.iter().any(|p| p.len() != c) {
        return Err(Error::Shape("images disagree on channel count".into()));
    }
    Ok((0..c)
        .map(|ch| {
            let hits: Vec<(f64, f64)> = all.iter().filter_map(|p| p[ch]).collect();
            if hits.is_empty() {
                (0.5, 0.5)
            } else {
                let n = hits.len() as f64;
                (
                    hits.iter().map(|h| h.0).sum::<f64>() / n,
                    hits.iter().map(|h| h.1).sum::<f64>() / n,
                )
            }
        })
        .collect())
}

/// Affine map from peak features to landmark coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRegressor {
    pub n_features: usize,
    pub n_outputs: usize,
    /// `(n_features + 1) × n_outputs`, bias row last.
    pub coefficients: Vec<f64>,
}

impl LandmarkRegressor {
    /// Ridge least squares with an unpenalized bias. `features` is
    /// `images × n_features`, `targets` is `images × n_outputs`.
    pub fn fit(
        features: &[f64],
        targets: &[f64],
        n_features: usize,
        n_outputs: usize,
        lambda: f64,
    ) -> Result<Self> {
        if n_features == 0 || n_outputs == 0 || features.len() % n_features != 0 {
            return Err(Error::Shape("regressor features are malformed".into()));
        }
        let rows = features.len() / n_features;
        if targets.len() != rows * n_outputs {
            return Err(Error::Shape(format!(
                "{} targets for {rows} images of {n_outputs} outputs",
                targets.len()
            )));
        }
        if rows < n_features + 1 {
            return Err(Error::Insufficient(format!(
                "{rows} images for {} regressor parameters per output",
                n_features + 1
            )));
        }
        let n = n_features + 1;
        let mut design = Vec::with_capacity(rows * n);
        for row in features.chunks_exact(n_features) {
            design.extend_from_slice(row);
            design.push(1.0);
        }
        let coefficients = ridge_least_squares(&design, targets, rows, n, n_outputs, lambda, &[n_features])?;
        Ok(Self {
            n_features,
            n_outputs,
            coefficients,
        })
    }

    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.n_features {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.n_features,
                features.len()
            )));
        }
        let m = self.n_outputs;
        let mut out = self.coefficients[self.n_features * m..].to_vec();
        for (i, f) in features.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(&self.coefficients[i * m..(i + 1) * m]) {
                *o += f * c;
            }
        }
        Ok(out)
    }
}

/// Mean point distance over `normalizer`, in percent.
pub fn normalized_error(pred: &[(f64, f64)], truth: &[(f64, f64)], normalizer: f64) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "{} predicted vs {} true landmarks",
            pred.len(),
            truth.len()
        )));
    }
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(Error::InvalidArgument("normalizer must be positive".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| sqrt((p.0 - t.0) * (p.0 - t.0) + (p.1 - t.1) * (p.1 - t.1)))
        .sum();
    Ok(total / pred.len() as f64 / normalizer * 100.0)
}

//! Metrics report from a detections file and an annotated manifest.
//!
//! Images split into an assignment half and a test half: entries marked
//! `"test"` form the test half when any exist; otherwise even positions
//! assign and odd positions test. Each named part takes the channel with the
//! best AP on the assignment half, and AP is reported on the test half. The
//! landmark regressor is fitted on the assignment half as well.

use std::collections::HashMap;

use partdisc_core::detect::{BBox, Detection};
use partdisc_core::eval::{
    assign_channels, average_precision, mean_peak_coordinates, normalized_error, peak_features, EvalImage,
    GroundTruth, LandmarkRegressor, MatchRule,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::infer::DetectionRecord;
use crate::manifest::{Entry, Manifest};
use crate::settings::EvalConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartReport {
    pub name: String,
    pub channel: usize,
    pub ap_iou: Option<f64>,
    pub ap_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkError {
    pub name: String,
    /// Mean normalized error over test images, percent.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkReport {
    pub fitted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub per_landmark: Vec<LandmarkError>,
    pub mean_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_assign: usize,
    pub n_test: usize,
    pub iou_threshold: f64,
    pub l2_threshold: f64,
    pub parts: Vec<PartReport>,
    pub map_iou: Option<f64>,
    pub map_l2: Option<f64>,
    pub landmarks: LandmarkReport,
    /// Parts or metrics left out because they were undefined.
    pub flags: Vec<String>,
}

/// `(assignment, test)` entry indices.
pub fn split(manifest: &Manifest) -> (Vec<usize>, Vec<usize>) {
    let n = manifest.entries.len();
    if manifest.entries.iter().any(Entry::is_test) {
        (0..n).partition(|&i| !manifest.entries[i].is_test())
    } else {
        (0..n).partition(|&i| i % 2 == 0)
    }
}

fn part_names(manifest: &Manifest) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for e in &manifest.entries {
        let boxes = e.part_boxes.iter().flatten().map(|b| &b.name);
        let points = e.landmarks.iter().flatten().map(|p| &p.name);
        for n in boxes.chain(points) {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    names
}

fn landmark_names(manifest: &Manifest) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for p in manifest.entries.iter().flat_map(|e| e.landmarks.iter().flatten()) {
        if !names.contains(&p.name) {
            names.push(p.name.clone());
        }
    }
    names
}

/// Ground truth instances of `part` in `entry`: boxes when annotated,
/// otherwise landmark points.
fn truths(entry: &Entry, part: &str) -> Vec<GroundTruth> {
    let boxes: Vec<GroundTruth> = entry
        .part_boxes
        .iter()
        .flatten()
        .filter(|b| b.name == part)
        .filter_map(|b| {
            let bb = BBox::new(b.x1, b.y1, b.x2, b.y2).ok()?;
            let (x, y) = bb.center();
            Some(GroundTruth { x, y, bbox: Some(bb) })
        })
        .collect();
    if !boxes.is_empty() {
        return boxes;
    }
    entry
        .landmarks
        .iter()
        .flatten()
        .filter(|p| p.name == part)
        .map(|p| GroundTruth { x: p.x, y: p.y, bbox: None })
        .collect()
}

struct ImageData {
    dets: Vec<Detection>,
}

fn ap_for(
    manifest: &Manifest,
    images: &[usize],
    data: &[ImageData],
    gts: &[Vec<GroundTruth>],
    channel: usize,
    rule: MatchRule,
) -> Option<f64> {
    let chan: Vec<Vec<Detection>> = images
        .iter()
        .map(|&i| data[i].dets.iter().filter(|d| d.channel == channel).copied().collect())
        .collect();
    let evals: Vec<EvalImage<'_>> = images
        .iter()
        .zip(&chan)
        .map(|(&i, d)| EvalImage {
            detections: d,
            truths: &gts[i],
            image_h: manifest.entries[i].image_height,
            image_w: manifest.entries[i].image_width,
        })
        .collect();
    average_precision(&evals, rule).ok()
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn evaluate(manifest: &Manifest, records: &[DetectionRecord], cfg: &EvalConfig) -> Result<Report> {
    let index: HashMap<&str, usize> = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.image_id.as_str(), i))
        .collect();
    let mut data: Vec<ImageData> = manifest.entries.iter().map(|_| ImageData { dets: Vec::new() }).collect();
    let mut flags = Vec::new();
    let mut unknown = 0usize;
    for r in records {
        match index.get(r.image_id.as_str()) {
            Some(&i) => data[i].dets.push(r.detection()?),
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        flags.push(format!("{unknown} detections reference images outside the manifest"));
    }
    let (assign, test) = split(manifest);
    let mut channels: Vec<usize> = assign.iter().flat_map(|&i| data[i].dets.iter().map(|d| d.channel)).collect();
    channels.sort_unstable();
    channels.dedup();

    let iou_rule = MatchRule::Iou(cfg.iou_threshold);
    let l2_rule = MatchRule::L2(cfg.l2_threshold);
    let names = part_names(manifest);
    let mut parts = Vec::new();
    if channels.is_empty() {
        flags.push("no detections on the assignment images".into());
    } else {
        let mut table = Vec::with_capacity(names.len());
        let mut gt_sets = Vec::with_capacity(names.len());
        for name in &names {
            let gts: Vec<Vec<GroundTruth>> = manifest.entries.iter().map(|e| truths(e, name)).collect();
            let has_boxes = gts.iter().flatten().any(|g| g.bbox.is_some());
            let rule = if has_boxes { iou_rule } else { l2_rule };
            table.push(
                channels
                    .iter()
                    .map(|&c| ap_for(manifest, &assign, &data, &gts, c, rule))
                    .collect::<Vec<_>>(),
            );
            gt_sets.push((gts, has_boxes));
        }
        let assignment = assign_channels(&names, table)?;
        for ((name, &col), (gts, has_boxes)) in names.iter().zip(&assignment.channels).zip(&gt_sets) {
            let channel = channels[col];
            let ap_iou = if *has_boxes {
                ap_for(manifest, &test, &data, gts, channel, iou_rule)
            } else {
                None
            };
            let ap_l2 = ap_for(manifest, &test, &data, gts, channel, l2_rule);
            if ap_l2.is_none() {
                flags.push(format!("part {name} has no test instances"));
            }
            parts.push(PartReport {
                name: name.clone(),
                channel,
                ap_iou,
                ap_l2,
            });
        }
    }
    let landmarks = landmark_regression(manifest, &data, &assign, &test, &channels, cfg)?;
    Ok(Report {
        n_assign: assign.len(),
        n_test: test.len(),
        iou_threshold: cfg.iou_threshold,
        l2_threshold: cfg.l2_threshold,
        map_iou: mean(parts.iter().filter_map(|p| p.ap_iou)),
        map_l2: mean(parts.iter().filter_map(|p| p.ap_l2)),
        parts,
        landmarks,
        flags,
    })
}

/// Per-channel best detection center, normalized to `[0, 1]`.
fn peaks(entry: &Entry, dets: &[Detection], channels: &[usize]) -> Vec<Option<(f64, f64)>> {
    channels
        .iter()
        .map(|&c| {
            dets.iter()
                .filter(|d| d.channel == c)
                .fold(None::<&Detection>, |best, d| match best {
                    Some(b) if b.score >= d.score => Some(b),
                    _ => Some(d),
                })
                .map(|d| (d.x / entry.image_width, d.y / entry.image_height))
        })
        .collect()
}

fn landmark_targets(entry: &Entry, names: &[String]) -> Option<Vec<(f64, f64)>> {
    let lm = entry.landmarks.as_ref()?;
    names
        .iter()
        .map(|n| lm.iter().find(|p| &p.name == n).map(|p| (p.x, p.y)))
        .collect()
}

fn landmark_regression(
    manifest: &Manifest,
    data: &[ImageData],
    assign: &[usize],
    test: &[usize],
    channels: &[usize],
    cfg: &EvalConfig,
) -> Result<LandmarkReport> {
    let skipped = |note: String| LandmarkReport {
        fitted: false,
        note: Some(note),
        per_landmark: Vec::new(),
        mean_error: None,
    };
    let names = landmark_names(manifest);
    if names.is_empty() {
        return Ok(skipped("manifest has no landmarks".into()));
    }
    if channels.is_empty() {
        return Ok(skipped("no detections to regress from".into()));
    }
    let usable = |idx: &[usize]| -> Vec<(usize, Vec<(f64, f64)>)> {
        idx.iter()
            .filter_map(|&i| landmark_targets(&manifest.entries[i], &names).map(|t| (i, t)))
            .collect()
    };
    let fit_set = usable(assign);
    let eval_set = usable(test);
    let n_features = 2 * channels.len();
    if fit_set.len() < n_features + 1 {
        return Ok(skipped(format!(
            "{} annotated fitting images for {} regressor inputs",
            fit_set.len(),
            n_features + 1
        )));
    }
    if eval_set.is_empty() {
        return Ok(skipped("no annotated test images".into()));
    }
    let peak_of = |i: usize| peaks(&manifest.entries[i], &data[i].dets, channels);
    let fit_peaks: Vec<_> = fit_set.iter().map(|(i, _)| peak_of(*i)).collect();
    let fill = mean_peak_coordinates(&fit_peaks)?;
    let mut features = Vec::with_capacity(fit_set.len() * n_features);
    let mut targets = Vec::with_capacity(fit_set.len() * names.len() * 2);
    for ((i, t), p) in fit_set.iter().zip(&fit_peaks) {
        let e = &manifest.entries[*i];
        features.extend(peak_features(p, &fill)?);
        targets.extend(t.iter().flat_map(|(x, y)| [x / e.image_width, y / e.image_height]));
    }
    let reg = LandmarkRegressor::fit(&features, &targets, n_features, names.len() * 2, cfg.ridge)?;
    let mut sums = vec![0.0; names.len()];
    let mut all = Vec::with_capacity(eval_set.len());
    for (i, truth) in &eval_set {
        let e = &manifest.entries[*i];
        let out = reg.predict(&peak_features(&peak_of(*i), &fill)?)?;
        let pred: Vec<(f64, f64)> = out
            .chunks_exact(2)
            .map(|p| (p[0] * e.image_width, p[1] * e.image_height))
            .collect();
        let norm = e.error_normalizer();
        for (k, (p, t)) in pred.iter().zip(truth).enumerate() {
            sums[k] += normalized_error(&[*p], &[*t], norm)?;
        }
        all.push(normalized_error(&pred, truth, norm)?);
    }
    let n = eval_set.len() as f64;
    Ok(LandmarkReport {
        fitted: true,
        note: None,
        per_landmark: names
            .iter()
            .zip(&sums)
            .map(|(name, s)| LandmarkError {
                name: name.clone(),
                error: s / n,
            })
            .collect(),
        mean_error: mean(all.into_iter()),
    })
}

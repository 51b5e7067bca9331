//! Detection over a dataset and the JSON-lines detection format.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use partdisc_core::detect::{extract_peaks, nms, BBox, Detection};
use partdisc_core::part_layer::{forward, PartLayer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::settings::InferConfig;
use crate::train::Dataset;

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub channel: usize,
    pub x: f64,
    pub y: f64,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl DetectionRecord {
    pub fn new(image_id: &str, d: &Detection) -> Self {
        Self {
            image_id: image_id.to_string(),
            channel: d.channel,
            x: d.x,
            y: d.y,
            score: d.score,
            bbox: [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2],
        }
    }

    pub fn detection(&self) -> Result<Detection> {
        let [x1, y1, x2, y2] = self.bbox;
        Ok(Detection {
            channel: self.channel,
            x: self.x,
            y: self.y,
            score: self.score,
            bbox: BBox::new(x1, y1, x2, y2)?,
        })
    }
}

/// Peaks + NMS for one backbone map.
pub fn detect_image(
    layer: &PartLayer,
    backbone: &partdisc_core::FeatureMap<f32>,
    image_h: f64,
    image_w: f64,
    cfg: &InferConfig,
) -> Result<Vec<Detection>> {
    let probs = forward(backbone, layer)?;
    let peaks = extract_peaks(&probs, image_h, image_w, cfg.score_threshold, cfg.box_side)?;
    Ok(nms(&peaks, cfg.nms_iou))
}

/// Detections for every manifest entry, in manifest order.
pub fn detect_dataset(data: &Dataset, layer: &PartLayer, cfg: &InferConfig) -> Result<Vec<DetectionRecord>> {
    let per_image = data
        .manifest
        .entries
        .par_iter()
        .zip(&data.maps)
        .map(|(e, m)| {
            let dets = detect_image(layer, m, e.image_height, e.image_width, cfg)?;
            Ok(dets.iter().map(|d| DetectionRecord::new(&e.image_id, d)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

pub fn write_jsonl(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| AppError::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DetectionRecord>> {
    let f = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DetectionRecord = serde_json::from_str(&line)
            .map_err(|e| AppError::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(r);
    }
    Ok(out)
}

//! Writes a synthetic dataset in the same layout real exports use:
//! `features/<id>.npy`, `manifest.json`, plus `truth.json` with the planted
//! transforms.

use std::fs;
use std::path::{Path, PathBuf};

use partdisc_core::synth::{part_name, SynthConfig, SyntheticDataset};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AppError, Result};
use crate::manifest::{Entry, Manifest, NamedBox, NamedPoint};
use crate::npy::save_feature_map;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Serialize)]
struct TruthPart {
    name: String,
    row: f64,
    col: f64,
}

#[derive(Serialize)]
struct TruthScene {
    image_id: String,
    seed: u64,
    /// Template grid to image grid, `[[a, b, tr], [c, d, tc]]` over `(row, col)`.
    theta: [[f64; 3]; 2],
    parts: Vec<TruthPart>,
}

#[derive(Serialize)]
struct Truth<'a> {
    config: &'a SynthConfig,
    template_parts: Vec<TruthPart>,
    scenes: Vec<TruthScene>,
}

fn truth_part(part: usize, (row, col): (f64, f64)) -> TruthPart {
    TruthPart {
        name: part_name(part),
        row,
        col,
    }
}

/// Manifest describing `ds` with feature files under `features/`.
pub fn manifest_for(ds: &SyntheticDataset, base_dir: &Path) -> Result<Manifest> {
    let cfg = &ds.config;
    let size = cfg.image_size();
    let entries = ds
        .scenes
        .iter()
        .map(|s| {
            let landmarks = s
                .true_parts
                .iter()
                .map(|p| {
                    let (x, y) = p.pixel(cfg.stride);
                    NamedPoint {
                        name: part_name(p.part),
                        x,
                        y,
                    }
                })
                .collect();
            let part_boxes = s
                .true_parts
                .iter()
                .filter_map(|p| {
                    let b = s.part_box(p.part, cfg)?.clip(size, size);
                    Some(NamedBox {
                        name: part_name(p.part),
                        x1: b.x1,
                        y1: b.y1,
                        x2: b.x2,
                        y2: b.y2,
                    })
                })
                .collect();
            Entry {
                image_id: s.image_id.clone(),
                feature_path: format!("features/{}.npy", s.image_id),
                image_height: size,
                image_width: size,
                category: "synthetic".into(),
                split: None,
                landmarks: Some(landmarks),
                part_boxes: Some(part_boxes),
                bbox: None,
                normalizer: None,
            }
        })
        .collect();
    Manifest::new(entries, base_dir.to_path_buf())
}

/// Writes everything under `out_dir` and returns the manifest path.
pub fn write_dataset(ds: &SyntheticDataset, out_dir: &Path) -> Result<PathBuf> {
    let features = out_dir.join("features");
    fs::create_dir_all(&features).map_err(|e| AppError::io(&features, e))?;
    let manifest = manifest_for(ds, out_dir)?;
    ds.scenes
        .par_iter()
        .zip(&manifest.entries)
        .try_for_each(|(s, e)| save_feature_map(&manifest.feature_path(e), &s.backbone))?;
    let path = out_dir.join(MANIFEST_FILE);
    manifest.save(&path)?;

    let truth = Truth {
        config: &ds.config,
        template_parts: ds.template_parts.iter().enumerate().map(|(k, &c)| truth_part(k, c)).collect(),
        scenes: ds
            .scenes
            .iter()
            .map(|s| TruthScene {
                image_id: s.image_id.clone(),
                seed: s.seed,
                theta: s.transform.rows(),
                parts: s.true_parts.iter().map(|p| truth_part(p.part, p.cell)).collect(),
            })
            .collect(),
    };
    let truth_path = out_dir.join(TRUTH_FILE);
    let text = serde_json::to_string_pretty(&truth).map_err(|e| AppError::Internal(e.to_string()))?;
    fs::write(&truth_path, text + "\n").map_err(|e| AppError::io(&truth_path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use partdisc_core::synth::generate_dataset;

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_images: 3,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let path = write_dataset(&ds, dir.path()).unwrap();
        let data = crate::train::Dataset::load(&path).unwrap();
        assert_eq!(data.maps.len(), 3);
        assert_eq!(data.maps[1], ds.scenes[1].backbone);
        let e = &data.manifest.entries[0];
        assert_eq!(e.landmarks.as_ref().unwrap().len(), 5);
        assert_eq!(e.part_boxes.as_ref().unwrap().len(), 5);
        assert!(dir.path().join(TRUTH_FILE).is_file());
    }
}

//! Dataset manifest: a JSON array with one object per image.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedBox {
    pub name: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub image_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub feature_path: String,
    pub image_height: f64,
    pub image_width: f64,
    #[serde(default)]
    pub category: String,
    /// `"train"` or `"test"`; absent means train.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<NamedPoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_boxes: Option<Vec<NamedBox>>,
    /// Object box `[x1, y1, x2, y2]`, used to normalize landmark error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    /// Explicit landmark-error normalizer in pixels (e.g. pupil distance).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<f64>,
}

impl Entry {
    pub fn is_test(&self) -> bool {
        self.split.as_deref() == Some("test")
    }

    /// Pixels by which landmark error is divided: explicit normalizer, else
    /// the object box's longer side, else the image's longer side.
    pub fn error_normalizer(&self) -> f64 {
        if let Some(n) = self.normalizer {
            return n;
        }
        if let Some([x1, y1, x2, y2]) = self.bbox {
            return (x2 - x1).max(y2 - y1);
        }
        self.image_height.max(self.image_width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<Entry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<Entry>, base_dir: PathBuf) -> Result<Self> {
        let m = Self { entries, base_dir };
        m.validate(Path::new("<manifest>"))?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let entries: Vec<Entry> =
            serde_json::from_str(&text).map_err(|e| AppError::format(path, e.to_string()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { entries, base_dir };
        m.validate(path)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries)
            .map_err(|e| AppError::Internal(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| AppError::io(path, e))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.entries.is_empty() {
            return Err(AppError::format(path, "manifest has no entries"));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(AppError::format(path, format!("duplicate image_id {:?}", e.image_id)));
            }
            if !(e.image_height > 0.0 && e.image_width > 0.0) {
                return Err(AppError::format(
                    path,
                    format!("{}: image size must be positive", e.image_id),
                ));
            }
            if let Some(s) = &e.split {
                if s != "train" && s != "test" {
                    return Err(AppError::format(path, format!("{}: unknown split {s:?}", e.image_id)));
                }
            }
            if e.normalizer.is_some_and(|n| !(n > 0.0)) {
                return Err(AppError::format(path, format!("{}: normalizer must be positive", e.image_id)));
            }
        }
        Ok(())
    }

    pub fn feature_path(&self, entry: &Entry) -> PathBuf {
        let p = Path::new(&entry.feature_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.image_id.clone()).collect()
    }

    /// Indices of the entries used for training (everything not marked
    /// test).
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| !self.entries[i].is_test()).collect()
    }
}

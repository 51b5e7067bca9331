//! Part layer checkpoints: a binary weight file plus a JSON sidecar.
//!
//! The weight file is the 8-byte magic `PARTDISC`, then `c_in` and `c_out`
//! as little-endian `u64`, then `c_out × c_in` little-endian `f32` weights,
//! row-major. The sidecar (same path with `.json` appended) carries the
//! logit scale, the epoch and the training configuration.

use std::fs;
use std::path::{Path, PathBuf};

use partdisc_core::part_layer::PartLayer;
use partdisc_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

const MAGIC: &[u8; 8] = b"PARTDISC";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub c_in: usize,
    pub c_out: usize,
    pub logit_scale: f64,
    /// Completed training epochs; 0 for a cluster-initialized layer.
    pub epoch: usize,
    pub config: TrainConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save(path: &Path, layer: &PartLayer, epoch: usize, config: &TrainConfig) -> Result<()> {
    let mut bytes = Vec::with_capacity(24 + layer.weights().len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(layer.c_in() as u64).to_le_bytes());
    bytes.extend_from_slice(&(layer.c_out() as u64).to_le_bytes());
    for w in layer.weights() {
        bytes.extend_from_slice(&(*w as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))?;
    let side = Sidecar {
        c_in: layer.c_in(),
        c_out: layer.c_out(),
        logit_scale: layer.logit_scale(),
        epoch,
        config: config.clone(),
    };
    let sp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).map_err(|e| AppError::Internal(e.to_string()))?;
    fs::write(&sp, text + "\n").map_err(|e| AppError::io(&sp, e))
}

pub fn load(path: &Path) -> Result<(PartLayer, Sidecar)> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    let bad = |m: String| AppError::format(path, m);
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(bad("not a part layer checkpoint".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes")) as usize;
    let (c_in, c_out) = (word(8), word(16));
    let n = c_in
        .checked_mul(c_out)
        .ok_or_else(|| bad("checkpoint shape overflows".into()))?;
    if bytes.len() != 24 + n * 4 {
        return Err(bad(format!(
            "{} weight bytes for a {c_out}x{c_in} layer",
            bytes.len() - 24
        )));
    }
    let weights: Vec<f64> = bytes[24..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let sp = sidecar_path(path);
    let text = fs::read_to_string(&sp).map_err(|e| AppError::io(&sp, e))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| AppError::format(&sp, e.to_string()))?;
    if (side.c_in, side.c_out) != (c_in, c_out) {
        return Err(AppError::format(&sp, "sidecar shape disagrees with the weight file"));
    }
    let layer = PartLayer::new(c_in, c_out, weights, side.logit_scale).map_err(|e| bad(e.to_string()))?;
    Ok((layer, side))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layer.ckpt");
        let layer = PartLayer::new(2, 3, vec![0.5, -0.25, 1.0, 0.0, 0.0, 0.0], 7.0).unwrap();
        let cfg = TrainConfig::default();
        save(&path, &layer, 4, &cfg).unwrap();
        let (back, side) = load(&path).unwrap();
        assert_eq!(back, layer);
        assert_eq!(side.epoch, 4);
        assert_eq!(side.config, cfg);
        assert_eq!(fs::read(&path).unwrap().len(), 24 + 6 * 4);
    }

    #[test]
    fn rejects_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layer.ckpt");
        let layer = PartLayer::new(2, 2, vec![0.0; 4], 1.0).unwrap();
        save(&path, &layer, 0, &TrainConfig::default()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(load(&path).is_err());
    }
}

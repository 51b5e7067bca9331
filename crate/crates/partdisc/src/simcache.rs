//! On-disk similarity matrix: `similarity_ids.json` (the id order) next to
//! `similarity.bin` (magic `PDSIMMAT`, `n` as little-endian `u64`, then
//! `n × n` little-endian `f32` divergences, row-major).

use std::fs;
use std::path::{Path, PathBuf};

use partdisc_core::similarity::SimilarityMatrix;

use crate::error::{AppError, Result};

const MAGIC: &[u8; 8] = b"PDSIMMAT";
pub const MATRIX_FILE: &str = "similarity.bin";
pub const IDS_FILE: &str = "similarity_ids.json";

fn paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(MATRIX_FILE), dir.join(IDS_FILE))
}

pub fn save(dir: &Path, matrix: &SimilarityMatrix) -> Result<()> {
    let (bin, ids) = paths(dir);
    let mut bytes = Vec::with_capacity(16 + matrix.scores().len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(matrix.len() as u64).to_le_bytes());
    for v in matrix.scores() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(&bin, bytes).map_err(|e| AppError::io(&bin, e))?;
    let text = serde_json::to_string_pretty(matrix.ids()).map_err(|e| AppError::Internal(e.to_string()))?;
    fs::write(&ids, text + "\n").map_err(|e| AppError::io(&ids, e))
}

pub fn exists(dir: &Path) -> bool {
    let (bin, ids) = paths(dir);
    bin.is_file() && ids.is_file()
}

pub fn load(dir: &Path) -> Result<SimilarityMatrix> {
    let (bin, ids_path) = paths(dir);
    let text = fs::read_to_string(&ids_path).map_err(|e| AppError::io(&ids_path, e))?;
    let ids: Vec<String> = serde_json::from_str(&text).map_err(|e| AppError::format(&ids_path, e.to_string()))?;
    let bytes = fs::read(&bin).map_err(|e| AppError::io(&bin, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(AppError::format(&bin, "not a similarity matrix file"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if n != ids.len() || bytes.len() != 16 + n * n * 4 {
        return Err(AppError::format(&bin, format!("size disagrees with {} ids", ids.len())));
    }
    let scores = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    SimilarityMatrix::from_scores(ids, scores).map_err(|e| AppError::format(&bin, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SimilarityMatrix::from_scores(
            vec!["a".into(), "b".into()],
            vec![0.0, 0.125, 0.125, 0.0],
        )
        .unwrap();
        assert!(!exists(dir.path()));
        save(dir.path(), &m).unwrap();
        assert!(exists(dir.path()));
        assert_eq!(load(dir.path()).unwrap(), m);
    }
}

//! `align --dump`: one JSON line per (training image, pool member) pair.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use partdisc_core::alignment::SpatialTransform;
use partdisc_core::part_layer::{ForwardPass, PartLayer};
use partdisc_core::pipeline::{align_member, alignment_seed};
use partdisc_core::similarity::SimilarityMatrix;
use partdisc_core::TrainConfig;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AppError, Result};
use crate::train::{build_pools, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub image_id: String,
    pub member_id: String,
    /// Rows of the member-to-canvas transform over `(row, col)`.
    pub theta: Vec<Vec<f64>>,
    pub inlier_count: usize,
    pub match_count: usize,
    pub fallback: bool,
}

fn rows(t: &SpatialTransform) -> Vec<Vec<f64>> {
    match t {
        SpatialTransform::Affine(a) => a.rows().iter().map(|r| r.to_vec()).collect(),
        SpatialTransform::Homography(h) => h.rows().iter().map(|r| r.to_vec()).collect(),
    }
}

/// Alignments of every training image's pool, as the first training epoch
/// would compute them.
pub fn pool_alignments(
    data: &Dataset,
    layer: &PartLayer,
    matrix: &SimilarityMatrix,
    cfg: &TrainConfig,
) -> Result<Vec<PairRecord>> {
    let pools = build_pools(data, matrix, cfg)?;
    let train = data.train_indices();
    let mut out = Vec::new();
    for (&image, pool) in train.iter().zip(&pools) {
        let fwd = ForwardPass::run(&data.maps[image], layer)?;
        let recs = pool
            .par_iter()
            .enumerate()
            .map(|(j, &m)| {
                let member = ForwardPass::run(&data.maps[m], layer)?;
                let a = align_member(
                    &data.maps[image],
                    &fwd,
                    &data.maps[m],
                    member,
                    cfg,
                    alignment_seed(cfg.seed, 0, image, j),
                )?;
                Ok(PairRecord {
                    image_id: data.manifest.entries[image].image_id.clone(),
                    member_id: data.manifest.entries[m].image_id.clone(),
                    theta: rows(&a.placement.transform),
                    inlier_count: a.placement.inlier_count,
                    match_count: a.placement.match_count,
                    fallback: a.placement.fallback,
                })
            })
            .collect::<partdisc_core::Result<Vec<_>>>()?;
        out.extend(recs);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[PairRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| AppError::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

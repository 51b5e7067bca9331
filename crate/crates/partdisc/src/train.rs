//! Dataset-level training: cluster initialization, similarity pools and the
//! epoch loop.
//!
//! Within a step the pool members are forwarded and aligned in parallel;
//! every reduction happens in a fixed order afterwards, so results do not
//! depend on the number of worker threads.

use std::path::Path;

use partdisc_core::part_layer::{init_from_clusters, sample_backbone_vectors, AdagradState, ForwardPass, PartLayer};
use partdisc_core::pipeline::{align_member, alignment_seed, assemble_step, AlignedMember};
use partdisc_core::similarity::{assemble_matrix, choose_subset, top_k_pool, upper_pairs, DistributionGrid, SimilarityMatrix};
use partdisc_core::{derive_seed, FeatureMap, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::manifest::Manifest;
use crate::npy::load_feature_map;

/// A manifest with its backbone maps in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub maps: Vec<FeatureMap<f32>>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let maps = manifest
            .entries
            .par_iter()
            .map(|e| load_feature_map(&manifest.feature_path(e)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest, maps)
    }

    pub fn new(manifest: Manifest, maps: Vec<FeatureMap<f32>>) -> Result<Self> {
        if maps.len() != manifest.entries.len() {
            return Err(AppError::Internal("one map per manifest entry".into()));
        }
        let c = maps[0].channels();
        if let Some((e, m)) = manifest.entries.iter().zip(&maps).find(|(_, m)| m.channels() != c) {
            return Err(AppError::format(
                manifest.feature_path(e),
                format!("{} channels, expected {c}", m.channels()),
            ));
        }
        Ok(Self { manifest, maps })
    }

    pub fn channels(&self) -> usize {
        self.maps[0].channels()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.manifest.train_indices()
    }
}

/// Runs `f` on a pool of `threads` workers (0 picks the rayon default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AppError::Internal(e.to_string()))?;
    Ok(pool.install(f))
}

/// Part layer initialized from spherical k-means over training backbone
/// vectors.
pub fn cluster_init(data: &Dataset, cfg: &TrainConfig) -> Result<PartLayer> {
    let maps: Vec<&FeatureMap<f32>> = data.train_indices().into_iter().map(|i| &data.maps[i]).collect();
    if maps.is_empty() {
        return Err(AppError::format(&data.manifest.base_dir, "no training images"));
    }
    let sample = sample_backbone_vectors(&maps, cfg.cluster_sample, derive_seed(cfg.seed, &[1]))?;
    Ok(init_from_clusters(
        &sample,
        data.channels(),
        cfg.k_clusters,
        derive_seed(cfg.seed, &[2]),
        cfg.kmeans_iterations,
        cfg.logit_scale,
    )?)
}

/// Pairwise divergences of the training images' part-response maps, kept
/// at `f32` precision so a cached matrix and a fresh one rank identically.
pub fn similarity_matrix(data: &Dataset, layer: &PartLayer, common_size: usize) -> Result<SimilarityMatrix> {
    let train = data.train_indices();
    let ids: Vec<String> = train.iter().map(|&i| data.manifest.entries[i].image_id.clone()).collect();
    let grids = train
        .par_iter()
        .map(|&i| {
            let probs = ForwardPass::run(&data.maps[i], layer)?.into_probs();
            DistributionGrid::from_map(&probs, common_size)
        })
        .collect::<partdisc_core::Result<Vec<_>>>()?;
    let pairs = upper_pairs(grids.len());
    let values = pairs
        .par_iter()
        .map(|&(i, j)| grids[i].divergence(&grids[j]).map(|d| d as f32 as f64))
        .collect::<partdisc_core::Result<Vec<_>>>()?;
    Ok(assemble_matrix(ids, &pairs, &values)?)
}

/// For every training image (in manifest order), the dataset indices of
/// its similar pool.
pub fn build_pools(data: &Dataset, matrix: &SimilarityMatrix, cfg: &TrainConfig) -> Result<Vec<Vec<usize>>> {
    let train = data.train_indices();
    let ids = matrix.ids();
    let train_ids: Vec<&str> = train.iter().map(|&i| data.manifest.entries[i].image_id.as_str()).collect();
    if ids.iter().map(String::as_str).ne(train_ids.iter().copied()) {
        return Err(AppError::Usage(
            "similarity cache does not match the manifest; rerun `sim`".into(),
        ));
    }
    let subset: Vec<String> = choose_subset(ids.len(), cfg.subset_size, derive_seed(cfg.seed, &[3]))
        .into_iter()
        .map(|i| ids[i].clone())
        .collect();
    train
        .iter()
        .map(|&i| {
            let pool = top_k_pool(matrix, &data.manifest.entries[i].image_id, cfg.top_k, Some(&subset))?;
            Ok(pool.iter().map(|id| train[matrix.index_of(id).expect("pool ids come from the matrix")]).collect())
        })
        .collect()
}

/// Summary of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    /// Fraction of pool members that fell back to the untransformed
    /// placement.
    pub fallback_rate: f64,
    pub mean_inliers: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub layer: PartLayer,
    pub log: Vec<EpochLog>,
}

/// Forward + align every pool member of training image `image`.
fn aligned_pool(
    data: &Dataset,
    layer: &PartLayer,
    train: &ForwardPass,
    image: usize,
    pool: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<AlignedMember>> {
    Ok(pool
        .par_iter()
        .enumerate()
        .map(|(j, &m)| {
            let fwd = ForwardPass::run(&data.maps[m], layer)?;
            align_member(
                &data.maps[image],
                train,
                &data.maps[m],
                fwd,
                cfg,
                alignment_seed(cfg.seed, epoch, image, j),
            )
        })
        .collect::<partdisc_core::Result<Vec<_>>>()?)
}

/// Trains `layer` for `cfg.epochs` epochs. `matrix` is the similarity of
/// the training images under the initial layer (computed when absent).
/// `on_epoch` sees the layer after each epoch.
pub fn train(
    data: &Dataset,
    mut layer: PartLayer,
    matrix: Option<SimilarityMatrix>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &PartLayer) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate().map_err(|e| AppError::Usage(e.to_string()))?;
    if layer.c_in() != data.channels() {
        return Err(AppError::Usage(format!(
            "checkpoint expects {} backbone channels, data has {}",
            layer.c_in(),
            data.channels()
        )));
    }
    let train_idx = data.train_indices();
    let mut matrix = match matrix {
        Some(m) => m,
        None => similarity_matrix(data, &layer, cfg.common_size)?,
    };
    let mut pools = build_pools(data, &matrix, cfg)?;
    let mut opt = AdagradState::for_layer(&layer, cfg.learning_rate, cfg.lr_decay, cfg.lr_milestones());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.refresh_every > 0 && epoch % cfg.refresh_every == 0 {
            matrix = similarity_matrix(data, &layer, cfg.common_size)?;
            pools = build_pools(data, &matrix, cfg)?;
        }
        opt.set_epoch(epoch);
        let (mut loss_sum, mut members, mut fallbacks, mut inliers) = (0.0, 0usize, 0usize, 0usize);
        for (t, &image) in train_idx.iter().enumerate() {
            let fwd = ForwardPass::run(&data.maps[image], &layer)?;
            let pool = aligned_pool(data, &layer, &fwd, image, &pools[t], cfg, epoch)?;
            let step = assemble_step(&layer, &fwd, pool, cfg)?;
            for p in &step.placements {
                members += 1;
                fallbacks += p.fallback as usize;
                inliers += p.inlier_count;
            }
            loss_sum += step.loss;
            opt.step(&mut layer, &step.weight_grad)?;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / train_idx.len() as f64,
            learning_rate: opt.effective_lr(),
            fallback_rate: if members == 0 { 0.0 } else { fallbacks as f64 / members as f64 },
            mean_inliers: if members == 0 { 0.0 } else { inliers as f64 / members as f64 },
        };
        on_epoch(&entry, &layer)?;
        log.push(entry);
    }
    Ok(TrainOutcome { layer, log })
}

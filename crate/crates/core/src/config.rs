//! Training hyperparameters.

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Spatial transform estimated between a training map and a pool member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransformFamily {
    #[default]
    Affine,
    Translation,
    Homography,
    /// No alignment: pool maps are placed on the canvas unchanged.
    None,
}

/// Which maps feed the cosine matcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchSource {
    /// Max-normalized part-response maps.
    #[default]
    Part,
    /// Max-normalized backbone maps.
    Backbone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub top_k: usize,
    pub subset_size: usize,
    pub cosine_threshold: f64,
    pub transform_family: TransformFamily,
    pub max_per_channel: usize,
    pub suppress_radius: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Recompute similarity pools every this many epochs; 0 never.
    pub refresh_every: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub k_clusters: usize,
    /// Upper bound on backbone vectors drawn for clustering.
    pub cluster_sample: usize,
    pub kmeans_iterations: usize,
    /// Multiplier applied to the cosine logits before the softmax.
    pub logit_scale: f64,
    pub common_size: usize,
    pub ransac_iterations: usize,
    pub inlier_tol: f64,
    pub min_inliers: usize,
    pub include_self_in_pseudo_gt: bool,
    pub match_on: MatchSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            top_k: 15,
            subset_size: 2000,
            cosine_threshold: 0.6,
            transform_family: TransformFamily::Affine,
            max_per_channel: 3,
            suppress_radius: 0,
            epochs: 10,
            seed: 0,
            refresh_every: 0,
            learning_rate: 5e-3,
            lr_decay: 0.1,
            k_clusters: 512,
            cluster_sample: 100_000,
            kmeans_iterations: 30,
            logit_scale: 1.0,
            common_size: crate::similarity::DEFAULT_COMMON_SIZE,
            ransac_iterations: 100,
            inlier_tol: 1.0,
            min_inliers: 6,
            include_self_in_pseudo_gt: false,
            match_on: MatchSource::Part,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("top_k", self.top_k),
            ("subset_size", self.subset_size),
            ("max_per_channel", self.max_per_channel),
            ("k_clusters", self.k_clusters),
            ("cluster_sample", self.cluster_sample),
            ("common_size", self.common_size),
            ("ransac_iterations", self.ransac_iterations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(-1.0..=1.0).contains(&self.cosine_threshold) {
            return Err(Error::InvalidArgument(
                "cosine_threshold must lie in [-1, 1]".into(),
            ));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("logit_scale", self.logit_scale),
            ("inlier_tol", self.inlier_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument("lr_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Epochs at which the learning rate is multiplied by `lr_decay`: a
    /// single milestone two thirds of the way through training.
    pub fn lr_milestones(&self) -> alloc::vec::Vec<usize> {
        if self.epochs < 2 {
            return alloc::vec::Vec::new();
        }
        alloc::vec![(2 * self.epochs).div_ceil(3)]
    }
}
